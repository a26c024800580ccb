// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "svfit/adapter.hpp"
#include "svfit/io.hpp"
#include "svfit/model.hpp"

namespace svfit::ckpt {

/// What a checkpoint holds. Encoded in the "meta.kind" tensor.
///   dense_stack    — plain block weights (pretrained or merged) + head
///   adapter_stack  — per-block adapter state + frozen k/o weights + head
///   adapter_single — one standalone adapter layer
enum class Kind { dense_stack = 0, adapter_stack = 1, adapter_single = 2 };

Kind kind_of(const io::TensorMap& tensors); // throws MissingTensor/InvalidConfig

void append_meta(io::TensorMap& tensors, const std::string& name, double value);
double meta_value(const io::TensorMap& tensors, const std::string& name);

/// Adapter state under a name prefix ("layer." or "block<i>.q."), one tensor
/// per buffer; vectors are stored as r x 1 matrices.
void append_adapter(io::TensorMap& tensors, const std::string& prefix,
                    const adapt::AdapterLayer& layer);
adapt::AdapterLayer read_adapter(const io::TensorMap& tensors, const std::string& prefix,
                                 adapt::Method method);

io::TensorMap pack_single(const adapt::AdapterLayer& layer);
adapt::AdapterLayer unpack_single(const io::TensorMap& tensors);

io::TensorMap pack_stack(const model::ToyBlockStack& stack);
model::ToyBlockStack unpack_stack(const io::TensorMap& tensors);

/// Dense checkpoint for a stack (block<i>.w_{q,k,v,o} + head + meta), the
/// layout gen-pretrained writes and build() consumes.
io::TensorMap pack_dense_stack(std::size_t n_blocks, std::size_t d_model,
                               std::size_t n_classes, const io::TensorMap& block_tensors);

/// Fold every adapter in the checkpoint into dense matrices. Each folded
/// layer is probed with `probes` seeded inputs against the adapter forward;
/// the max absolute discrepancy is written to *max_discrepancy and a
/// MergeDiscrepancy is thrown above 1e-9.
io::TensorMap merge_all(const io::TensorMap& tensors, double* max_discrepancy,
                        std::size_t probes = 16);

} // namespace svfit::ckpt
