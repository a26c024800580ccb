// SPDX-License-Identifier: Apache-2.0
//
// svfit command-line tool: spectrum analysis, truncated-SVD image
// reconstruction, adapter training/sweeps, merge-back and parameter
// accounting. Every subcommand is a thin shell over the library.
//
// Exit codes: 0 ok, 1 usage, 2 data/validation, 3 numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "svfit/adapter.hpp"
#include "svfit/checkpoint.hpp"
#include "svfit/errors.hpp"
#include "svfit/io.hpp"
#include "svfit/linalg.hpp"
#include "svfit/tasks.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void ensure_writable(const std::filesystem::path& path, bool force) {
    if (!force && std::filesystem::exists(path)) {
        throw svfit::InvalidInput("output exists (pass --force to overwrite): " +
                                  path.string());
    }
}

std::size_t percent_rank(double percent, std::size_t d) {
    const auto r = static_cast<std::size_t>(std::ceil(percent / 100.0 * static_cast<double>(d)));
    return std::clamp<std::size_t>(r, 1, d);
}

struct SvdAnalyzeArgs {
    std::string matrix_file;
    std::size_t top = 8;
    bool json = false;
};

int cmd_svd_analyze(const SvdAnalyzeArgs& args) {
    const svfit::Matrix w = svfit::io::read_matrix(args.matrix_file);
    const svfit::linalg::SvdFactors f = svfit::linalg::svd(w);
    const std::size_t d = f.sigma.size();
    const std::size_t k = std::min(args.top, d);

    const double percents[] = {1.0, 10.0, 50.0, 100.0};
    nlohmann::json energy = nlohmann::json::array();
    for (double pct : percents) {
        const std::size_t r = percent_rank(pct, d);
        const auto e = svfit::linalg::energy_ratio(f.sigma, r);
        energy.push_back({{"percent", pct},
                          {"r", r},
                          {"nuclear", e.nuclear},
                          {"frobenius", e.frobenius}});
    }

    if (args.json) {
        nlohmann::json out;
        out["rows"] = w.rows();
        out["cols"] = w.cols();
        out["sigma_top"] = std::vector<double>(f.sigma.begin(),
                                               f.sigma.begin() + static_cast<long>(k));
        out["energy"] = energy;
        std::cout << out.dump(2) << "\n";
        return kExitOk;
    }

    std::printf("matrix %zux%zu, %zu singular values\n", w.rows(), w.cols(), d);
    for (std::size_t i = 0; i < k; ++i) {
        std::printf("  sigma[%zu] = %.12g\n", i, f.sigma[i]);
    }
    std::printf("energy captured by top-r singular values:\n");
    std::printf("  %8s %6s %12s %12s\n", "percent", "r", "nuclear", "frobenius");
    for (const auto& row : energy) {
        std::printf("  %8.0f %6zu %12.6f %12.6f\n", row["percent"].get<double>(),
                    row["r"].get<std::size_t>(), row["nuclear"].get<double>(),
                    row["frobenius"].get<double>());
    }
    return kExitOk;
}

struct ReconstructArgs {
    std::string image;
    std::vector<std::size_t> ranks;
    std::string order = "top";
    std::string out_dir;
    bool force = false;
};

int cmd_reconstruct(const ReconstructArgs& args) {
    const svfit::GrayImage img = svfit::io::read_pgm(args.image);
    const auto order = args.order == "bottom" ? svfit::tasks::Order::bottom
                                              : svfit::tasks::Order::top;
    const svfit::tasks::ImageSpectrum spectrum(img);
    std::filesystem::create_directories(args.out_dir);
    const std::string stem = std::filesystem::path(args.image).stem().string();

    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t r : args.ranks) {
        const auto res = spectrum.reconstruct(r, order);
        const std::string name = stem + "_" + args.order + "_" + std::to_string(r) + ".pgm";
        const std::filesystem::path out_path = std::filesystem::path(args.out_dir) / name;
        ensure_writable(out_path, args.force);
        svfit::io::write_pgm(out_path, res.image);
        entries.push_back({{"r", r},
                           {"psnr_db", res.psnr_db},
                           {"mse", res.mse},
                           {"nuclear_ratio", res.energy.nuclear},
                           {"frobenius_ratio", res.energy.frobenius},
                           {"file", name}});
        std::printf("r=%zu  psnr=%.2f dB  frobenius_ratio=%.6f  -> %s\n", r, res.psnr_db,
                    res.energy.frobenius, out_path.c_str());
    }
    nlohmann::json report;
    report["source"] = args.image;
    report["width"] = img.width;
    report["height"] = img.height;
    report["order"] = args.order;
    report["entries"] = entries;
    const std::filesystem::path report_path =
        std::filesystem::path(args.out_dir) / "report.json";
    ensure_writable(report_path, args.force);
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw svfit::IoError("cannot write " + report_path.string());
    out << report.dump(2) << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::string method;
    std::int64_t rank = -1;
    double lr = -1.0;
    std::int64_t seed = -1;
    bool force = false;
};

svfit::tasks::RunConfig load_config(const TrainArgs& args) {
    svfit::tasks::RunConfig cfg = svfit::tasks::RunConfig::from_json_file(args.config);
    if (!args.method.empty()) cfg.method = svfit::adapt::method_from_string(args.method);
    if (args.rank >= 0) cfg.rank = static_cast<std::size_t>(args.rank);
    if (args.lr > 0.0) cfg.lr_base = args.lr;
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    cfg.validate();
    return cfg;
}

void print_final(const svfit::tasks::MetricsRecord& rec) {
    std::printf("final step=%zu train_loss=%.6g eval_metric=%.6g wall_ms=%.0f\n", rec.step,
                rec.train_loss, rec.eval_metric, rec.wall_ms);
}

int cmd_train(const TrainArgs& args) {
    const svfit::tasks::RunConfig cfg = load_config(args);
    ensure_writable(cfg.metrics_path, args.force);
    if (cfg.task != svfit::tasks::TaskKind::reconstruct) {
        ensure_writable(cfg.checkpoint_path, args.force);
    }
    print_final(svfit::tasks::run_training(cfg));
    return kExitOk;
}

struct SweepArgs {
    TrainArgs train;
    std::string axis;
    std::vector<double> values;
    std::string out;
};

int cmd_sweep(const SweepArgs& args) {
    const svfit::tasks::RunConfig cfg = load_config(args.train);
    const auto axis = [&] {
        if (args.axis == "rank") return svfit::tasks::SweepAxis::rank;
        if (args.axis == "lr_multiplier") return svfit::tasks::SweepAxis::lr_multiplier;
        throw svfit::InvalidConfig("sweep: axis must be rank or lr_multiplier");
    }();
    std::vector<double> values = args.values;
    if (values.empty() && axis == svfit::tasks::SweepAxis::lr_multiplier) {
        values = cfg.lr_multiplier_sweep; // config-provided default grid
    }
    if (values.empty()) throw svfit::InvalidConfig("sweep: no values given");
    ensure_writable(args.out, args.train.force);
    const auto rows = svfit::tasks::sweep(cfg, axis, values, args.out);
    for (const auto& row : rows) {
        std::printf("%s=%g params=%zu final_loss=%.6g final_metric=%.6g\n", args.axis.c_str(),
                    row.value, row.trainable_params, row.final_loss, row.final_metric);
    }
    std::printf("summary written to %s\n", args.out.c_str());
    return kExitOk;
}

struct MergeArgs {
    std::string checkpoint;
    std::string out;
    bool force = false;
};

int cmd_merge(const MergeArgs& args) {
    const svfit::io::TensorMap tensors = svfit::io::read_checkpoint(args.checkpoint);
    ensure_writable(args.out, args.force);
    double discrepancy = 0.0;
    const svfit::io::TensorMap merged = svfit::ckpt::merge_all(tensors, &discrepancy);
    svfit::io::write_checkpoint(args.out, merged);
    std::printf("max forward discrepancy over probes: %.3e\n", discrepancy);
    std::printf("merged checkpoint written to %s\n", args.out.c_str());
    return kExitOk;
}

int cmd_param_count(const std::string& config_path) {
    const svfit::tasks::RunConfig cfg =
        svfit::tasks::RunConfig::from_json_file(config_path);
    const std::size_t per_matrix =
        svfit::adapt::param_count(cfg.method, cfg.d_model, cfg.d_model, cfg.rank);
    std::printf("method=%s rank=%zu d_model=%zu\n",
                std::string(svfit::adapt::to_string(cfg.method)).c_str(), cfg.rank,
                cfg.d_model);
    if (cfg.task == svfit::tasks::TaskKind::blobs) {
        for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
            std::printf("  block%zu.q: %zu\n", i, per_matrix);
            std::printf("  block%zu.v: %zu\n", i, per_matrix);
        }
    } else {
        std::printf("  layer: %zu\n", per_matrix);
    }
    std::printf("total trainable (head excluded): %zu\n",
                svfit::tasks::config_param_count(cfg));
    return kExitOk;
}

struct GenPretrainedArgs {
    std::vector<std::size_t> dims; // n_blocks, d_model[, classes]
    std::int64_t seed = -1;
    std::string out;
    std::size_t steps = 300;
    bool force = false;
};

int cmd_gen_pretrained(const GenPretrainedArgs& args) {
    if (args.dims.size() < 2 || args.dims.size() > 3) {
        throw svfit::InvalidConfig("gen-pretrained: --dims takes n_blocks,d_model[,classes]");
    }
    const std::size_t n_blocks = args.dims[0];
    const std::size_t d_model = args.dims[1];
    const std::size_t classes = args.dims.size() == 3 ? args.dims[2] : 4;
    if (n_blocks == 0 || d_model == 0 || classes < 2) {
        throw svfit::InvalidConfig("gen-pretrained: bad dimensions");
    }
    ensure_writable(args.out, args.force);
    const auto tensors = svfit::tasks::pretrain_stack(
        static_cast<std::uint64_t>(args.seed), n_blocks, d_model, classes, args.steps);
    const std::filesystem::path out_path(args.out);
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    svfit::io::write_checkpoint(out_path, tensors);
    std::printf("pretrained checkpoint (%zu blocks, d=%zu, %zu classes) -> %s\n", n_blocks,
                d_model, classes, args.out.c_str());
    return kExitOk;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const svfit::ConvergenceFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const svfit::NonFiniteActivation& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const svfit::NonFiniteGradient& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const svfit::MergeDiscrepancy& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const svfit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"svfit: singular-value fine-tuning toolkit"};
    app.require_subcommand(1);

    SvdAnalyzeArgs svd_args;
    auto* svd_cmd = app.add_subcommand("svd-analyze",
                                       "print the spectrum and energy ratios of a matrix file");
    svd_cmd->add_option("matrix-file", svd_args.matrix_file, "SVFM matrix file")->required();
    svd_cmd->add_option("--top", svd_args.top, "number of singular values to print");
    svd_cmd->add_flag("--json", svd_args.json, "machine-readable output");

    ReconstructArgs rec_args;
    auto* rec_cmd =
        app.add_subcommand("reconstruct", "truncated-SVD reconstructions of a PGM image");
    rec_cmd->add_option("image", rec_args.image, "input PGM (binary P5)")->required();
    rec_cmd->add_option("--ranks", rec_args.ranks, "ranks to reconstruct at")
        ->required()
        ->delimiter(',');
    rec_cmd->add_option("--order", rec_args.order, "top|bottom singular values")
        ->check(CLI::IsMember({"top", "bottom"}));
    rec_cmd->add_option("--out-dir", rec_args.out_dir, "output directory")->required();
    rec_cmd->add_flag("--force", rec_args.force, "overwrite existing outputs");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "run one training job from a JSON config");
    train_cmd->add_option("--config", train_args.config, "RunConfig JSON")->required();
    train_cmd->add_option("--method", train_args.method,
                          "override: svfit|lora|pissa|full|frozen");
    train_cmd->add_option("--rank", train_args.rank, "override adapter rank");
    train_cmd->add_option("--lr", train_args.lr, "override base learning rate");
    train_cmd->add_option("--seed", train_args.seed, "override seed");
    train_cmd->add_flag("--force", train_args.force, "overwrite existing outputs");

    SweepArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "run a rank or learning-rate sweep");
    sweep_cmd->add_option("--config", sweep_args.train.config, "RunConfig JSON")->required();
    sweep_cmd->add_option("--axis", sweep_args.axis, "rank|lr_multiplier")->required();
    sweep_cmd->add_option("--values", sweep_args.values,
                          "sweep values (default for lr_multiplier: config list)")
        ->delimiter(',');
    sweep_cmd->add_option("--out", sweep_args.out, "summary CSV path")->required();
    sweep_cmd->add_option("--method", sweep_args.train.method, "override method");
    sweep_cmd->add_option("--seed", sweep_args.train.seed, "override seed");
    sweep_cmd->add_flag("--force", sweep_args.train.force, "overwrite existing outputs");

    MergeArgs merge_args;
    auto* merge_cmd =
        app.add_subcommand("merge", "fold adapters in a checkpoint into dense matrices");
    merge_cmd->add_option("--checkpoint", merge_args.checkpoint, "input checkpoint")
        ->required();
    merge_cmd->add_option("--out", merge_args.out, "output checkpoint")->required();
    merge_cmd->add_flag("--force", merge_args.force, "overwrite existing outputs");

    std::string param_count_config;
    auto* pc_cmd = app.add_subcommand("param-count", "print trainable-parameter counts");
    pc_cmd->add_option("--config", param_count_config, "RunConfig JSON")->required();

    GenPretrainedArgs gen_args;
    auto* gen_cmd = app.add_subcommand(
        "gen-pretrained", "pre-train a toy stack on a seeded source task and save it");
    gen_cmd->add_option("--dims", gen_args.dims, "n_blocks,d_model[,classes]")
        ->required()
        ->delimiter(',');
    gen_cmd->add_option("--seed", gen_args.seed, "pre-training seed")->required();
    gen_cmd->add_option("--out", gen_args.out, "output checkpoint")->required();
    gen_cmd->add_option("--steps", gen_args.steps, "pre-training steps");
    gen_cmd->add_flag("--force", gen_args.force, "overwrite existing outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (app.got_subcommand(svd_cmd)) return run_guarded([&] { return cmd_svd_analyze(svd_args); });
    if (app.got_subcommand(rec_cmd)) return run_guarded([&] { return cmd_reconstruct(rec_args); });
    if (app.got_subcommand(train_cmd)) return run_guarded([&] { return cmd_train(train_args); });
    if (app.got_subcommand(sweep_cmd)) return run_guarded([&] { return cmd_sweep(sweep_args); });
    if (app.got_subcommand(merge_cmd)) return run_guarded([&] { return cmd_merge(merge_args); });
    if (app.got_subcommand(pc_cmd)) {
        return run_guarded([&] { return cmd_param_count(param_count_config); });
    }
    if (app.got_subcommand(gen_cmd)) {
        return run_guarded([&] { return cmd_gen_pretrained(gen_args); });
    }
    return kExitUsage;
}
