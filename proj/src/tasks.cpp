// SPDX-License-Identifier: Apache-2.0
#include "svfit/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "svfit/checkpoint.hpp"
#include "svfit/errors.hpp"
#include "svfit/model.hpp"
#include "svfit/rng.hpp"

namespace svfit::tasks {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
}

// Seed streams for the independent random decisions of a run.
enum : std::uint64_t {
    kStreamAdapterInit = 1,
    kStreamShuffle = 2,
    kStreamPretrain = 3,
    kStreamStackBuild = 4,
    kStreamData = 5,
};

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> idx) {
    Matrix out(m.rows(), idx.size());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto src = m.row(i);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < idx.size(); ++j) dst[j] = src[idx[j]];
    }
    return out;
}

class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) {
        if (path.has_parent_path()) {
            std::filesystem::create_directories(path.parent_path());
        }
        out_.open(path, std::ios::trunc);
        if (!out_) throw IoError("cannot open metrics file: " + path.string());
    }
    void write(const MetricsRecord& rec) {
        out_ << rec.to_json().dump() << '\n';
        if (!out_) throw IoError("metrics write failed");
    }

private:
    std::ofstream out_;
};

class WallClock {
public:
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Softmax cross entropy over logits rows. Fills grad with d(mean loss)/d(logits)
// and returns the mean loss.
double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels, Matrix& grad) {
    const std::size_t n = logits.rows();
    const std::size_t c = logits.cols();
    grad = Matrix(n, c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto z = logits.row(i);
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        total += lse - z[labels[i]];
        auto g = grad.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            g[j] = std::exp(z[j] - lse) / static_cast<double>(n);
        }
        g[labels[i]] -= 1.0 / static_cast<double>(n);
    }
    return total / static_cast<double>(n);
}

double accuracy(const Matrix& logits, std::span<const std::size_t> labels) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto z = logits.row(i);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < z.size(); ++j) {
            if (z[j] > z[arg]) arg = j;
        }
        if (arg == labels[i]) ++hits;
    }
    return logits.rows() == 0 ? 0.0 : static_cast<double>(hits) / logits.rows();
}

std::size_t effective_log_every(std::size_t log_every, std::size_t total_steps) {
    if (log_every > 0) return log_every;
    return std::max<std::size_t>(1, total_steps / 20);
}

void write_checkpoint_file(const std::string& path, const io::TensorMap& tensors) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    io::write_checkpoint(p, tensors);
}

std::vector<optim::ParamSlot> make_slots(
    std::span<adapt::AdapterLayer::ParamView> views,
    std::span<const std::span<const double>> grads, bool decay_sigma) {
    if (views.size() != grads.size()) {
        throw DimensionMismatch("training: view/gradient count mismatch");
    }
    std::vector<optim::ParamSlot> slots(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        slots[i].value = views[i].data;
        slots[i].grad = grads[i];
        slots[i].decay = views[i].name == "sigma_r" ? decay_sigma : true;
    }
    return slots;
}

} // namespace

std::string_view to_string(TaskKind t) {
    switch (t) {
        case TaskKind::teacher_student: return "teacher_student";
        case TaskKind::blobs: return "blobs";
        case TaskKind::reconstruct: return "reconstruct";
    }
    return "?";
}

TaskKind task_from_string(std::string_view name) {
    if (name == "teacher_student") return TaskKind::teacher_student;
    if (name == "blobs") return TaskKind::blobs;
    if (name == "reconstruct") return TaskKind::reconstruct;
    throw InvalidConfig("unknown task '" + std::string(name) + "'");
}

std::string_view to_string(Perturb p) {
    return p == Perturb::sigma_only ? "sigma_only" : "general";
}

Perturb perturb_from_string(std::string_view name) {
    if (name == "sigma_only") return Perturb::sigma_only;
    if (name == "general") return Perturb::general;
    throw InvalidConfig("unknown perturb mode '" + std::string(name) + "'");
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "task", "method", "rank", "seed", "lr_base", "lr_multiplier_sweep",
        "epochs", "batch_size", "warmup_ratio", "weight_decay", "decay_sigma",
        "train_head", "optimizer", "clip_norm", "n_blocks", "d_model", "classes",
        "seq_len", "n_samples", "n_eval", "perturb", "perturb_scale", "perturb_rank",
        "log_every", "pretrained", "image", "metrics_path", "checkpoint_path"};
    if (!j.is_object()) throw InvalidConfig("config: expected a JSON object");
    for (const auto& item : j.items()) {
        if (!known.contains(item.key())) {
            throw InvalidConfig("config: unknown key '" + item.key() + "'");
        }
    }

    RunConfig cfg;
    try {
        cfg.task = task_from_string(j.at("task").get<std::string>());
        cfg.method = adapt::method_from_string(j.at("method").get<std::string>());
        cfg.rank = j.at("rank").get<std::size_t>();
        cfg.seed = j.at("seed").get<std::uint64_t>();

        const auto num = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        num("lr_base", cfg.lr_base);
        num("epochs", cfg.epochs);
        num("batch_size", cfg.batch_size);
        num("warmup_ratio", cfg.warmup_ratio);
        num("weight_decay", cfg.weight_decay);
        num("decay_sigma", cfg.decay_sigma);
        num("train_head", cfg.train_head);
        num("clip_norm", cfg.clip_norm);
        num("n_blocks", cfg.n_blocks);
        num("d_model", cfg.d_model);
        num("classes", cfg.n_classes);
        num("seq_len", cfg.seq_len);
        num("n_samples", cfg.n_samples);
        num("n_eval", cfg.n_eval);
        num("perturb_scale", cfg.perturb_scale);
        num("perturb_rank", cfg.perturb_rank);
        num("log_every", cfg.log_every);
        if (j.contains("optimizer")) {
            cfg.optimizer = optim::kind_from_string(j.at("optimizer").get<std::string>());
        }
        if (j.contains("perturb")) {
            cfg.perturb = perturb_from_string(j.at("perturb").get<std::string>());
        }
        if (j.contains("lr_multiplier_sweep")) {
            cfg.lr_multiplier_sweep = j.at("lr_multiplier_sweep").get<std::vector<double>>();
        }
        num("pretrained", cfg.pretrained_path);
        num("image", cfg.image_path);
        num("metrics_path", cfg.metrics_path);
        num("checkpoint_path", cfg.checkpoint_path);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("config: parse error: ") + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["task"] = std::string(to_string(task));
    j["method"] = std::string(adapt::to_string(method));
    j["rank"] = rank;
    j["seed"] = seed;
    j["lr_base"] = lr_base;
    j["lr_multiplier_sweep"] = lr_multiplier_sweep;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["warmup_ratio"] = warmup_ratio;
    j["weight_decay"] = weight_decay;
    j["decay_sigma"] = decay_sigma;
    j["train_head"] = train_head;
    j["optimizer"] = std::string(optim::to_string(optimizer));
    j["clip_norm"] = clip_norm;
    j["n_blocks"] = n_blocks;
    j["d_model"] = d_model;
    j["classes"] = n_classes;
    j["seq_len"] = seq_len;
    j["n_samples"] = n_samples;
    j["n_eval"] = n_eval;
    j["perturb"] = std::string(to_string(perturb));
    j["perturb_scale"] = perturb_scale;
    j["perturb_rank"] = perturb_rank;
    j["log_every"] = log_every;
    j["pretrained"] = pretrained_path;
    j["image"] = image_path;
    j["metrics_path"] = metrics_path;
    j["checkpoint_path"] = checkpoint_path;
    return j;
}

void RunConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw InvalidConfig("config: " + msg); };
    if (d_model < 1 || n_blocks < 1) fail("model dims must be positive");
    const bool needs_rank = method == adapt::Method::svfit || method == adapt::Method::lora ||
                            method == adapt::Method::pissa ||
                            task == TaskKind::reconstruct;
    if (needs_rank && rank < 1) fail("rank must be >= 1");
    if (task != TaskKind::reconstruct && needs_rank && rank > d_model) {
        fail("rank exceeds d_model");
    }
    if (task != TaskKind::reconstruct) {
        if (epochs < 1 || batch_size < 1) fail("epochs and batch_size must be >= 1");
        if (n_samples < 1) fail("n_samples must be >= 1");
        if (lr_base <= 0.0) fail("lr_base must be positive");
        if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) fail("warmup_ratio must be in [0, 1)");
        if (weight_decay < 0.0 || clip_norm < 0.0) fail("negative weight_decay/clip_norm");
        if (metrics_path.empty() || checkpoint_path.empty()) fail("output paths required");
    } else {
        if (metrics_path.empty()) fail("metrics_path required");
    }
    if (task == TaskKind::blobs) {
        if (n_classes < 2) fail("blobs needs at least 2 classes");
        if (seq_len < 1) fail("seq_len must be >= 1");
        if (n_eval < 1) fail("blobs needs an eval set");
    }
    if (task == TaskKind::teacher_student && perturb_rank > d_model) {
        fail("perturb_rank exceeds d_model");
    }
    if (perturb_scale < 0.0) fail("perturb_scale must be non-negative");
}

nlohmann::json MetricsRecord::to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["lr"] = lr;
    j["train_loss"] = train_loss;
    j["eval_metric"] = eval_metric;
    if (!sigma_snapshot.empty()) j["sigma_snapshot"] = sigma_snapshot;
    return j;
}

ImageSpectrum::ImageSpectrum(const GrayImage& img) : src_(img) {
    if (img.width < 8 || img.height < 8) {
        throw InvalidInput("image spectrum: image smaller than 8x8");
    }
    factors_ = linalg::svd(img.to_matrix());
}

ReconstructionResult ImageSpectrum::reconstruct(std::size_t r, Order order) const {
    const std::size_t d = factors_.sigma.size();
    if (r < 1 || r > d) {
        throw RankOutOfRange("reconstruct: r=" + std::to_string(r) + " not in [1, " +
                             std::to_string(d) + "]");
    }
    Matrix recon;
    if (order == Order::top) {
        recon = linalg::rank_r_approx(factors_, r);
    } else {
        // sum of the r smallest singular triples (ascending tail)
        const std::size_t first = d - r;
        const Matrix u_tail = factors_.u.columns(first, r);
        std::vector<double> sigma_tail(factors_.sigma.begin() +
                                           static_cast<std::ptrdiff_t>(first),
                                       factors_.sigma.end());
        Matrix vt_tail(r, factors_.d2());
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < factors_.d2(); ++j)
                vt_tail(i, j) = factors_.vt(first + i, j);
        recon = matmul(scale_columns(u_tail, sigma_tail), vt_tail);
    }

    ReconstructionResult res;
    const Matrix orig = src_.to_matrix();
    double se = 0.0;
    for (std::size_t i = 0; i < orig.rows(); ++i) {
        auto a = recon.row(i);
        auto b = orig.row(i);
        for (std::size_t j = 0; j < orig.cols(); ++j) {
            const double diff = a[j] - b[j];
            se += diff * diff;
        }
    }
    res.mse = se / static_cast<double>(orig.size());
    // peak = 1.0; cap so exact reconstructions stay finite/serializable
    res.psnr_db = res.mse < 1e-30 ? 300.0 : 10.0 * std::log10(1.0 / res.mse);
    res.energy = linalg::energy_ratio(factors_.sigma, r);
    res.image = GrayImage::from_matrix_clamped(recon);
    return res;
}

ReconstructionResult reconstruct_image(const GrayImage& img, std::size_t r, Order order) {
    return ImageSpectrum(img).reconstruct(r, order);
}

TeacherStudent gen_teacher_student(std::uint64_t seed, std::size_t d1, std::size_t d2,
                                   std::size_t r, Perturb perturb, double scale,
                                   std::size_t n_samples) {
    if (r > std::min(d1, d2)) {
        throw RankOutOfRange("gen_teacher_student: perturbation rank out of range");
    }
    Rng rng(seed);
    TeacherStudent out;
    out.w0 = gaussian_matrix(d1, d2, rng);
    if (perturb == Perturb::sigma_only) {
        linalg::SvdFactors f = linalg::svd(out.w0);
        for (std::size_t i = 0; i < r; ++i) {
            f.sigma[i] *= 1.0 + scale * rng.normal();
        }
        out.w_star = linalg::reconstruct(f);
    } else {
        out.w_star = out.w0 + scale * gaussian_matrix(d1, d2, rng);
    }
    out.x = gaussian_matrix(d2, n_samples, rng);
    out.y = matmul(out.w_star, out.x);
    return out;
}

BlobsData gen_blobs(std::uint64_t seed, std::size_t d, std::size_t classes,
                    std::size_t n_train, std::size_t n_eval, std::size_t seq_len) {
    Rng rng(seed);
    std::vector<std::vector<double>> means(classes, std::vector<double>(d));
    for (auto& mean : means) {
        for (double& v : mean) v = 2.0 * rng.normal();
    }
    const auto sample = [&](std::size_t label) {
        Matrix tokens(d, seq_len);
        for (std::size_t t = 0; t < seq_len; ++t)
            for (std::size_t i = 0; i < d; ++i)
                tokens(i, t) = means[label][i] + 0.5 * rng.normal();
        return tokens;
    };
    BlobsData data;
    for (std::size_t i = 0; i < n_train; ++i) {
        const std::size_t label = i % classes;
        data.train_x.push_back(sample(label));
        data.train_y.push_back(label);
    }
    for (std::size_t i = 0; i < n_eval; ++i) {
        const std::size_t label = i % classes;
        data.eval_x.push_back(sample(label));
        data.eval_y.push_back(label);
    }
    return data;
}

io::TensorMap pretrain_stack(std::uint64_t seed, std::size_t n_blocks, std::size_t d_model,
                             std::size_t n_classes, std::size_t steps) {
    Rng rng(derive_seed(seed, 20));
    const double init_std = 1.0 / std::sqrt(static_cast<double>(d_model));
    io::TensorMap block_tensors;
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        for (const char* name : {"w_q", "w_k", "w_v", "w_o"}) {
            block_tensors.emplace_back(prefix + name,
                                       gaussian_matrix(d_model, d_model, rng, init_std));
        }
    }
    const io::TensorMap init =
        ckpt::pack_dense_stack(n_blocks, d_model, n_classes, block_tensors);
    model::ToyBlockStack stack = model::ToyBlockStack::build(
        init, adapt::Method::full, 1, derive_seed(seed, 21));

    BlobsData data = gen_blobs(derive_seed(seed, 22), d_model, n_classes, 128, 0, 4);
    optim::Hyper hp;
    hp.lr_base = 0.02;
    optim::Optimizer opt(optim::Kind::adamw, hp);
    auto views = stack.trainable_views(true);
    const std::size_t batch = 16;
    const std::size_t n = data.train_x.size();
    for (std::size_t step = 1; step <= steps; ++step) {
        std::vector<Matrix> batch_x;
        std::vector<std::size_t> batch_y;
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t idx = ((step - 1) * batch + k) % n;
            batch_x.push_back(data.train_x[idx]);
            batch_y.push_back(data.train_y[idx]);
        }
        model::ForwardTrace trace;
        const Matrix logits = stack.forward(batch_x, trace);
        Matrix grad;
        cross_entropy(logits, batch_y, grad);
        const model::StackGradients grads = stack.backward(trace, grad);
        std::vector<std::span<const double>> grad_views;
        for (const auto& buf : grads.buffers) grad_views.emplace_back(buf);
        auto slots = make_slots(views, grad_views, true);
        opt.step(optim::schedule_lr(step, steps, 0.06, hp.lr_base), slots);
    }

    io::TensorMap out_blocks;
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const auto& block = stack.blocks()[i];
        const std::string prefix = "block" + std::to_string(i) + ".";
        out_blocks.emplace_back(prefix + "w_q", block.q.merge());
        out_blocks.emplace_back(prefix + "w_k", block.w_k);
        out_blocks.emplace_back(prefix + "w_v", block.v.merge());
        out_blocks.emplace_back(prefix + "w_o", block.w_o);
    }
    io::TensorMap out = ckpt::pack_dense_stack(n_blocks, d_model, n_classes, out_blocks);
    out.emplace_back("head", stack.head());
    return out;
}

namespace {

MetricsRecord run_teacher_student(const RunConfig& cfg) {
    const WallClock clock;
    const std::size_t d = cfg.d_model;
    const std::size_t perturb_rank = cfg.perturb_rank == 0 ? d : cfg.perturb_rank;
    const TeacherStudent data = gen_teacher_student(cfg.seed, d, d, perturb_rank,
                                                    cfg.perturb, cfg.perturb_scale,
                                                    cfg.n_samples);
    adapt::AdapterLayer layer = adapt::AdapterLayer::init(
        cfg.method, data.w0, cfg.rank, derive_seed(cfg.seed, kStreamAdapterInit));

    auto views = layer.trainable_views();
    optim::Hyper hp;
    hp.lr_base = cfg.lr_base;
    hp.weight_decay = cfg.weight_decay;
    hp.clip_norm = cfg.clip_norm;
    optim::Optimizer opt(cfg.optimizer, hp);

    const std::size_t n = cfg.n_samples;
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches;
    const std::size_t log_every = effective_log_every(cfg.log_every, total_steps);

    const auto full_mse = [&] {
        const Matrix pred = layer.forward(data.x);
        double se = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            se += (pred.data()[i] - data.y.data()[i]) * (pred.data()[i] - data.y.data()[i]);
        return se / static_cast<double>(pred.size());
    };

    MetricsWriter writer(cfg.metrics_path);
    Rng shuffle_rng(derive_seed(cfg.seed, kStreamShuffle));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    MetricsRecord record;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), shuffle_rng);
        for (std::size_t pos = 0; pos < n; pos += cfg.batch_size) {
            ++step;
            const std::size_t nb = std::min(cfg.batch_size, n - pos);
            const std::span<const std::size_t> idx(order.data() + pos, nb);
            const Matrix x = gather_columns(data.x, idx);
            const Matrix y = gather_columns(data.y, idx);
            const Matrix pred = layer.forward(x);
            if (!all_finite(pred)) {
                throw NonFiniteActivation("teacher_student: diverged at step " +
                                          std::to_string(step));
            }
            double se = 0.0;
            Matrix grad(pred.rows(), pred.cols());
            const double scale = 1.0 / static_cast<double>(pred.size());
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double diff = pred.data()[i] - y.data()[i];
                se += diff * diff;
                grad.data()[i] = 2.0 * scale * diff;
            }
            const double loss = se * scale;
            const adapt::LayerGradients lg = layer.backward(x, grad);
            const auto grad_views = lg.trainable();
            auto slots = make_slots(views, grad_views, cfg.decay_sigma);
            const double lr = optim::schedule_lr(step, total_steps, cfg.warmup_ratio,
                                                 cfg.lr_base);
            opt.step(lr, slots);

            if (step % log_every == 0 || step == total_steps) {
                record = MetricsRecord{};
                record.step = step;
                record.lr = lr;
                record.train_loss = loss;
                record.eval_metric = full_mse();
                if (cfg.method == adapt::Method::svfit) {
                    const auto& sigma = layer.svfit_state().sigma_r;
                    record.sigma_snapshot.assign(
                        sigma.begin(), sigma.begin() + std::min<std::size_t>(8, sigma.size()));
                }
                record.wall_ms = clock.elapsed_ms();
                writer.write(record);
            }
        }
    }
    write_checkpoint_file(cfg.checkpoint_path, ckpt::pack_single(layer));
    return record;
}

MetricsRecord run_blobs(const RunConfig& cfg) {
    const WallClock clock;
    const io::TensorMap pretrained =
        cfg.pretrained_path.empty()
            ? pretrain_stack(derive_seed(cfg.seed, kStreamPretrain), cfg.n_blocks,
                             cfg.d_model, cfg.n_classes)
            : io::read_checkpoint(cfg.pretrained_path);
    model::ToyBlockStack stack = model::ToyBlockStack::build(
        pretrained, cfg.method, cfg.rank, derive_seed(cfg.seed, kStreamStackBuild));
    const BlobsData data = gen_blobs(derive_seed(cfg.seed, kStreamData), cfg.d_model,
                                     cfg.n_classes, cfg.n_samples, cfg.n_eval, cfg.seq_len);

    auto views = stack.trainable_views(cfg.train_head);
    optim::Hyper hp;
    hp.lr_base = cfg.lr_base;
    hp.weight_decay = cfg.weight_decay;
    hp.clip_norm = cfg.clip_norm;
    optim::Optimizer opt(cfg.optimizer, hp);

    const std::size_t n = data.train_x.size();
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches;
    const std::size_t log_every = effective_log_every(cfg.log_every, total_steps);

    const auto eval_accuracy = [&] {
        double hits = 0.0;
        std::size_t done = 0;
        while (done < data.eval_x.size()) {
            const std::size_t nb = std::min<std::size_t>(32, data.eval_x.size() - done);
            const std::span<const Matrix> batch(data.eval_x.data() + done, nb);
            const std::span<const std::size_t> labels(data.eval_y.data() + done, nb);
            const Matrix logits = stack.forward(batch);
            hits += accuracy(logits, labels) * static_cast<double>(nb);
            done += nb;
        }
        return hits / static_cast<double>(data.eval_x.size());
    };

    MetricsWriter writer(cfg.metrics_path);
    Rng shuffle_rng(derive_seed(cfg.seed, kStreamShuffle));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    MetricsRecord record;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), shuffle_rng);
        for (std::size_t pos = 0; pos < n; pos += cfg.batch_size) {
            ++step;
            const std::size_t nb = std::min(cfg.batch_size, n - pos);
            std::vector<Matrix> batch_x;
            std::vector<std::size_t> batch_y;
            batch_x.reserve(nb);
            for (std::size_t k = 0; k < nb; ++k) {
                batch_x.push_back(data.train_x[order[pos + k]]);
                batch_y.push_back(data.train_y[order[pos + k]]);
            }
            model::ForwardTrace trace;
            const Matrix logits = stack.forward(batch_x, trace);
            Matrix grad;
            const double loss = cross_entropy(logits, batch_y, grad);
            const model::StackGradients grads = stack.backward(trace, grad);
            std::vector<std::span<const double>> grad_views;
            for (std::size_t i = 0; i < views.size(); ++i) grad_views.emplace_back(grads.buffers[i]);
            auto slots = make_slots(views, grad_views, cfg.decay_sigma);
            const double lr = optim::schedule_lr(step, total_steps, cfg.warmup_ratio,
                                                 cfg.lr_base);
            opt.step(lr, slots);

            if (step % log_every == 0 || step == total_steps) {
                record = MetricsRecord{};
                record.step = step;
                record.lr = lr;
                record.train_loss = loss;
                record.eval_metric = eval_accuracy();
                if (cfg.method == adapt::Method::svfit) {
                    const auto& sigma = stack.blocks()[0].q.svfit_state().sigma_r;
                    record.sigma_snapshot.assign(
                        sigma.begin(), sigma.begin() + std::min<std::size_t>(8, sigma.size()));
                }
                record.wall_ms = clock.elapsed_ms();
                writer.write(record);
            }
        }
    }
    write_checkpoint_file(cfg.checkpoint_path, ckpt::pack_stack(stack));
    return record;
}

MetricsRecord run_reconstruct(const RunConfig& cfg) {
    const WallClock clock;
    const GrayImage img =
        cfg.image_path.empty() ? make_test_image() : io::read_pgm(cfg.image_path);
    const ReconstructionResult res = reconstruct_image(img, cfg.rank, Order::top);
    MetricsRecord record;
    record.step = 0;
    record.lr = 0.0;
    record.train_loss = res.mse;
    record.eval_metric = res.psnr_db;
    record.wall_ms = clock.elapsed_ms();
    MetricsWriter writer(cfg.metrics_path);
    writer.write(record);
    return record;
}

} // namespace

MetricsRecord run_training(const RunConfig& cfg) {
    cfg.validate();
    switch (cfg.task) {
        case TaskKind::teacher_student: return run_teacher_student(cfg);
        case TaskKind::blobs: return run_blobs(cfg);
        case TaskKind::reconstruct: return run_reconstruct(cfg);
    }
    throw InvalidConfig("run_training: bad task");
}

std::size_t config_param_count(const RunConfig& cfg) {
    switch (cfg.task) {
        case TaskKind::teacher_student:
            return adapt::param_count(cfg.method, cfg.d_model, cfg.d_model, cfg.rank);
        case TaskKind::blobs:
            return 2 * cfg.n_blocks *
                   adapt::param_count(cfg.method, cfg.d_model, cfg.d_model, cfg.rank);
        case TaskKind::reconstruct: return 0;
    }
    return 0;
}

namespace {

std::string path_with_tag(const std::string& path, const std::string& tag) {
    const std::filesystem::path p(path);
    std::filesystem::path out = p.parent_path();
    out /= p.stem().string() + "_" + tag + p.extension().string();
    return out.string();
}

} // namespace

std::vector<SweepRow> sweep(const RunConfig& cfg, SweepAxis axis,
                            std::span<const double> values,
                            const std::filesystem::path& summary_csv) {
    if (values.empty()) throw InvalidConfig("sweep: no values");
    std::vector<SweepRow> rows;
    for (const double value : values) {
        RunConfig run_cfg = cfg;
        std::string tag;
        if (axis == SweepAxis::rank) {
            if (value < 1.0 || value != std::floor(value)) {
                throw InvalidConfig("sweep: rank values must be positive integers");
            }
            run_cfg.rank = static_cast<std::size_t>(value);
            tag = "rank_" + fmt_double(value);
        } else {
            if (value <= 0.0) throw InvalidConfig("sweep: lr multipliers must be positive");
            run_cfg.lr_base = cfg.lr_base * value;
            tag = "lr_" + fmt_double(value);
        }
        run_cfg.metrics_path = path_with_tag(cfg.metrics_path, tag);
        run_cfg.checkpoint_path = path_with_tag(cfg.checkpoint_path, tag);
        const MetricsRecord record = run_training(run_cfg);
        rows.push_back({value, config_param_count(run_cfg), record.train_loss,
                        record.eval_metric});
    }

    if (summary_csv.has_parent_path()) {
        std::filesystem::create_directories(summary_csv.parent_path());
    }
    std::ofstream out(summary_csv, std::ios::trunc);
    if (!out) throw IoError("cannot open sweep summary: " + summary_csv.string());
    out << "value,trainable_params,final_loss,final_metric\n";
    for (const SweepRow& row : rows) {
        out << fmt_double(row.value) << ',' << row.trainable_params << ','
            << fmt_double(row.final_loss) << ',' << fmt_double(row.final_metric) << '\n';
    }
    if (!out) throw IoError("sweep summary write failed");
    return rows;
}

GrayImage make_test_image(std::size_t size) {
    Rng rng(0x1A6E5EED);
    GrayImage img;
    img.width = size;
    img.height = size;
    img.pixels.resize(size * size);
    const double span = static_cast<double>(size - 1);
    constexpr double tau = 2.0 * std::numbers::pi;
    for (std::size_t y = 0; y < size; ++y) {
        const double v = static_cast<double>(y) / span;
        for (std::size_t x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / span;
            double val = 0.52;
            val += 0.17 * std::sin(tau * (2.0 * u + 0.6 * v));
            val += 0.13 * std::cos(tau * 3.3 * v) * std::sin(tau * 1.7 * u);
            val += 0.08 * (u - v);
            val += 0.05 * std::sin(tau * 11.0 * u * v + 1.0);
            val += 0.02 * rng.normal(); // broadband texture: full-rank spectrum
            img.pixels[y * size + x] = std::clamp(val, 0.0, 1.0);
        }
    }
    return img;
}

} // namespace svfit::tasks
