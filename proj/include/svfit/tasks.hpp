// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "svfit/adapter.hpp"
#include "svfit/image.hpp"
#include "svfit/io.hpp"
#include "svfit/linalg.hpp"
#include "svfit/matrix.hpp"
#include "svfit/optim.hpp"

namespace svfit::tasks {

enum class TaskKind { teacher_student, blobs, reconstruct };
enum class Order { top, bottom };
enum class Perturb { sigma_only, general };

std::string_view to_string(TaskKind t);
TaskKind task_from_string(std::string_view name);
std::string_view to_string(Perturb p);
Perturb perturb_from_string(std::string_view name);

/// JSON-serializable description of a training run. Keys absent from the
/// config fall back to the defaults below; unknown keys are rejected.
struct RunConfig {
    TaskKind task = TaskKind::teacher_student;
    adapt::Method method = adapt::Method::svfit;
    std::size_t rank = 8;
    std::uint64_t seed = 0; // mandatory in JSON

    double lr_base = 0.05;
    std::vector<double> lr_multiplier_sweep;
    std::size_t epochs = 250;
    std::size_t batch_size = 32;
    double warmup_ratio = 0.06;
    double weight_decay = 0.0;
    bool decay_sigma = true; // weight decay also hits sigma_r unless disabled
    bool train_head = true;
    optim::Kind optimizer = optim::Kind::adamw;
    double clip_norm = 0.0;

    // model dims (blobs task)
    std::size_t n_blocks = 2;
    std::size_t d_model = 64;
    std::size_t n_classes = 4;
    std::size_t seq_len = 4;

    std::size_t n_samples = 256;
    std::size_t n_eval = 128;

    // teacher_student task
    Perturb perturb = Perturb::sigma_only;
    double perturb_scale = 0.5;
    std::size_t perturb_rank = 0; // 0 = full

    std::size_t log_every = 0; // 0 = auto
    std::string pretrained_path; // blobs; empty = pretrain in-process
    std::string image_path;      // reconstruct; empty = built-in test image
    std::string metrics_path = "metrics.jsonl";
    std::string checkpoint_path = "final.ckpt";

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_json_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const; // throws InvalidConfig
};

/// One metrics line. wall_ms is measured wall-clock time and is reported on
/// stdout only; the JSONL file omits it so identical configs produce
/// byte-identical metrics files.
struct MetricsRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double eval_metric = 0.0;
    std::vector<double> sigma_snapshot; // svfit only: first 8 sigma_r values
    double wall_ms = 0.0;

    nlohmann::json to_json() const;
};

struct ReconstructionResult {
    GrayImage image;  // clamped to [0, 1]
    double psnr_db = 0.0;
    double mse = 0.0; // of the raw reconstruction, before clamping
    linalg::EnergyRatios energy;
};

/// SVD of an image computed once and reused across ranks/orders.
class ImageSpectrum {
public:
    explicit ImageSpectrum(const GrayImage& img);
    /// order=top: best rank-r approximation. order=bottom: sum of the r
    /// smallest singular triples.
    ReconstructionResult reconstruct(std::size_t r, Order order) const;
    std::span<const double> sigma() const { return factors_.sigma; }

private:
    GrayImage src_;
    linalg::SvdFactors factors_;
};

ReconstructionResult reconstruct_image(const GrayImage& img, std::size_t r, Order order);

/// Synthetic regression task with a controlled optimum: w_star perturbs w0's
/// top-r singular values (sigma_only, sharing w0's singular vectors) or adds
/// a dense perturbation (general). Dataset: x ~ N(0, I), y = w_star * x.
struct TeacherStudent {
    Matrix w0;
    Matrix w_star;
    Matrix x; // d2 x n
    Matrix y; // d1 x n
};
TeacherStudent gen_teacher_student(std::uint64_t seed, std::size_t d1, std::size_t d2,
                                   std::size_t r, Perturb perturb, double scale,
                                   std::size_t n_samples = 256);

/// Gaussian-cluster sequence classification: each sample is seq_len tokens
/// drawn around one of `classes` cluster means.
struct BlobsData {
    std::vector<Matrix> train_x;
    std::vector<std::size_t> train_y;
    std::vector<Matrix> eval_x;
    std::vector<std::size_t> eval_y;
};
BlobsData gen_blobs(std::uint64_t seed, std::size_t d, std::size_t classes,
                    std::size_t n_train, std::size_t n_eval, std::size_t seq_len);

/// Pre-train a stack on a seeded source task (full fine-tuning of q/v plus
/// the head) and return it as a dense checkpoint, so fine-tuning never
/// starts from raw random weights.
io::TensorMap pretrain_stack(std::uint64_t seed, std::size_t n_blocks, std::size_t d_model,
                             std::size_t n_classes, std::size_t steps = 300);

/// Run one configured training (or reconstruction) job: writes the JSONL
/// metrics file and a final checkpoint, returns the final record.
MetricsRecord run_training(const RunConfig& cfg);

enum class SweepAxis { rank, lr_multiplier };
struct SweepRow {
    double value = 0.0;
    std::size_t trainable_params = 0;
    double final_loss = 0.0;
    double final_metric = 0.0;
};
/// One run per value under a shared seed; writes a CSV summary with header
/// value,trainable_params,final_loss,final_metric.
std::vector<SweepRow> sweep(const RunConfig& cfg, SweepAxis axis,
                            std::span<const double> values,
                            const std::filesystem::path& summary_csv);

/// Procedurally generated structured test image (smooth gradients plus a
/// little broadband texture), 256x256 by default.
GrayImage make_test_image(std::size_t size = 256);

/// Adapter-trainable count for a config (head excluded).
std::size_t config_param_count(const RunConfig& cfg);

} // namespace svfit::tasks
