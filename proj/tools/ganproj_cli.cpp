// ganproj command-line tool.
//
// Exit codes: 0 ok, 2 configuration, 3 I/O or file format, 4 numeric failure,
// 5 selfcheck failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganproj/corruption.hpp"
#include "ganproj/error.hpp"
#include "ganproj/metrics.hpp"
#include "ganproj/recovery.hpp"
#include "ganproj/selfcheck.hpp"
#include "ganproj/sharpness.hpp"
#include "ganproj/training.hpp"
#include "ganproj/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ganproj;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitSelfcheck = 5;

bool g_quiet = false;

void log_line(const std::string& msg) {
    if (!g_quiet) std::cerr << "ganproj: " << msg << "\n";
}

void warn(const std::string& msg) { std::cerr << "ganproj: warning: " << msg << "\n"; }

std::string fmt(double v) { return format_number(v); }

/// Applies keys of a JSON config file to options not given on the command line.
void merge_config_file(CLI::App& sub, const std::string& path) {
    const json doc = read_json(path);
    if (!doc.is_object()) throw ConfigError(path + ": config file must hold a JSON object");
    for (const auto& [key, value] : doc.items()) {
        if (key == "config") throw ConfigError(path + ": config files cannot name another config file");
        CLI::Option* opt = sub.get_option_no_throw("--" + key);
        if (!opt) throw ConfigError(path + ": unknown option '" + key + "' for '" + sub.get_name() + "'");
        if (opt->count() > 0) continue;  // the command line wins
        auto add = [&](const json& v) {
            if (v.is_string()) {
                opt->add_result(v.get<std::string>());
            } else if (v.is_boolean()) {
                opt->add_result(v.get<bool>() ? "true" : "false");
            } else if (v.is_number_integer() || v.is_number_unsigned()) {
                opt->add_result(v.dump());
            } else if (v.is_number()) {
                opt->add_result(fmt(v.get<double>()));
            } else {
                throw ConfigError(path + ": option '" + key + "' has an unsupported value");
            }
        };
        if (value.is_array()) {
            for (const auto& v : value) add(v);
        } else {
            add(value);
        }
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw ConfigError(path + ": option '" + key + "': " + e.what());
        }
    }
}

void require_flag(bool present, const std::string& flag) {
    if (!present) throw ConfigError("missing required option " + flag);
}

/// Writes the resolved configuration as pretty JSON and echoes it to the log.
void write_resolved(const json& cfg, const fs::path& path) {
    log_line("resolved config " + cfg.dump());
    write_text_atomic(path, cfg.dump(2) + "\n");
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
    fs::path p = out;
    p.replace_extension();
    p += suffix;
    return p;
}

void ensure_dir(const fs::path& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string numbered(const std::string& stem, std::size_t i, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04zu", i);
    return stem + buf + ext;
}

// ---- recovery flags shared by recover / denoise / estimate-sharpness --------------

struct RecoveryFlags {
    std::string strategy = "stochastic";
    RecoveryConfig cfg;

    void add_to(CLI::App* sub) {
        sub->add_option("--strategy", strategy, "none | projected | stochastic");
        sub->add_option("--step-size", cfg.step_size, "Gradient step size");
        sub->add_option("--max-iters", cfg.max_iters, "Iteration cap per restart");
        sub->add_option("--tol", cfg.tol, "Absolute loss and relative stall tolerance");
        sub->add_option("--stall-window", cfg.stall_window, "Iterations for stall detection");
        sub->add_option("--restarts", cfg.restarts, "Random restarts");
    }
    RecoveryConfig resolve(std::uint64_t seed) {
        cfg.strategy = parse_strategy(strategy);
        cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
    json to_json() const {
        return {{"strategy", to_string(cfg.strategy)}, {"step-size", cfg.step_size}, {"max-iters", cfg.max_iters},
                {"tol", cfg.tol},  {"stall-window", cfg.stall_window}, {"restarts", cfg.restarts}};
    }
};

/// Targets come either from images (-i) or from a tensor file written by `corrupt`.
struct TargetSet {
    std::vector<Tensor> tensors;
    std::vector<std::string> names;
};

TargetSet load_targets(const std::vector<std::string>& inputs, const std::string& targets_file,
                       const GeneratorNet& net) {
    if (inputs.empty() == targets_file.empty()) throw ConfigError("give either -i/--input or --targets");
    TargetSet set;
    if (!targets_file.empty()) {
        for (auto& nt : load_tensors(targets_file)) {
            set.names.push_back(nt.name);
            set.tensors.push_back(std::move(nt.tensor));
        }
    } else {
        for (const auto& in : inputs) {
            set.tensors.push_back(normalize(read_image(in)));
            set.names.push_back(fs::path(in).stem().string());
        }
    }
    for (std::size_t i = 0; i < set.tensors.size(); ++i) {
        if (set.tensors[i].shape() != net.image_shape().hwc()) {
            throw ShapeError("input '" + set.names[i] + "' has shape " + shape_to_string(set.tensors[i].shape()) +
                             ", generator produces " + to_string(net.image_shape()));
        }
    }
    if (set.tensors.empty()) throw ConfigError("no targets to process");
    return set;
}

// ---- subcommands --------------------------------------------------------------------

struct TrainArgs {
    std::string out, loss_csv, data_dir, profile = "toy", checkpoint_dir;
    TrainConfig cfg;
    std::size_t latent_dim = 0;  // 0 keeps the profile's d
    ToyDatasetSpec data;
};

int cmd_train(TrainArgs& a) {
    require_flag(!a.out.empty(), "--out");
    if (a.profile == "toy") {
        a.cfg.profile = GeneratorProfile::toy();
    } else if (a.profile == "full") {
        a.cfg.profile = GeneratorProfile::full();
    } else {
        throw ConfigError("--profile must be toy or full");
    }
    if (a.latent_dim > 0) a.cfg.profile.latent_dim = a.latent_dim;
    a.cfg.checkpoint_dir = a.checkpoint_dir;
    a.cfg.validate();
    std::vector<Image> dataset;
    if (!a.data_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(a.data_dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) dataset.push_back(read_image(f));
        if (dataset.empty()) throw ConfigError("--data directory holds no images");
    } else {
        if (a.cfg.profile.channels != 1) throw ConfigError("the disc corpus is grayscale; use --data for 3 channels");
        dataset = make_toy_dataset(a.data);
    }
    const fs::path out = a.out;
    const fs::path csv = a.loss_csv.empty() ? sibling(out, ".loss.csv") : fs::path(a.loss_csv);
    json resolved = {{"command", "train"},
                     {"out", a.out},
                     {"loss-csv", csv.string()},
                     {"steps", a.cfg.steps},
                     {"batch-size", a.cfg.batch_size},
                     {"lr", a.cfg.adam.lr},
                     {"beta1", a.cfg.adam.beta1},
                     {"beta2", a.cfg.adam.beta2},
                     {"adam-eps", a.cfg.adam.eps},
                     {"seed", a.cfg.seed},
                     {"profile", a.profile},
                     {"latent-dim", a.cfg.profile.latent_dim},
                     {"disc-width", a.cfg.disc_width},
                     {"checkpoint-every", a.cfg.checkpoint_every},
                     {"checkpoint-dir", a.checkpoint_dir},
                     {"data", a.data_dir},
                     {"dataset-count", a.data.count},
                     {"dataset-seed", a.data.seed}};
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t every = std::max<std::size_t>(1, a.cfg.steps / 20);
    TrainResult r = train(dataset, a.cfg, [&](const LossRecord& rec) {
        if (rec.step % every == 0 || rec.step == a.cfg.steps) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char line[128];
            std::snprintf(line, sizeof line, "step %zu/%zu loss_d %.4f loss_g %.4f (%.0f s)", rec.step, a.cfg.steps,
                          rec.loss_d, rec.loss_g, secs);
            log_line(line);
        }
    });
    ensure_dir(out.parent_path());
    save_checkpoint(r.gen, r.disc, out);
    write_text_atomic(csv, loss_csv(r.history));
    write_resolved(resolved, sibling(out, ".config.json"));
    log_line("wrote " + out.string());
    return 0;
}

struct GenerateArgs {
    std::string weights, out_dir;
    std::size_t count = 16;
    std::uint64_t seed = 1;
};

int cmd_generate(GenerateArgs& a) {
    require_flag(!a.weights.empty(), "-g/--weights");
    require_flag(!a.out_dir.empty(), "--out-dir");
    if (a.count == 0) throw ConfigError("--count must be at least 1");
    const GeneratorNet net = load_weights(a.weights);
    ensure_dir(a.out_dir);
    std::vector<LatentVector> zs;
    for (std::size_t i = 0; i < a.count; ++i) {
        RandomStream rng(derive_seed(a.seed, {i}));
        LatentVector z(net.input_dim());
        for (double& v : z.values()) v = rng.uniform_pm1();
        write_image(denormalize(gen_forward(net, z)), fs::path(a.out_dir) / numbered("gen", i, ".png"));
        zs.push_back(std::move(z));
    }
    json resolved = {{"command", "generate"}, {"weights", a.weights}, {"out-dir", a.out_dir},
                     {"count", a.count},      {"seed", a.seed}};
    save_latents(zs, resolved, fs::path(a.out_dir) / "latents.json");
    write_resolved(resolved, fs::path(a.out_dir) / "config.json");
    log_line("wrote " + std::to_string(a.count) + " images to " + a.out_dir);
    return 0;
}

struct CorruptArgs {
    std::vector<std::string> inputs;
    std::string out_dir;
    double sigma = -1;
    std::uint64_t seed = 1;
};

int cmd_corrupt(CorruptArgs& a) {
    require_flag(!a.inputs.empty(), "-i/--input");
    require_flag(!a.out_dir.empty(), "--out-dir");
    require_flag(a.sigma >= 0, "--sigma");
    const NoiseModel model{a.sigma, a.seed};
    model.validate();
    std::vector<Image> images;
    for (const auto& in : a.inputs) images.push_back(read_image(in));
    ensure_dir(a.out_dir);
    std::vector<NamedTensor> targets;
    for (std::size_t i = 0; i < images.size(); ++i) {
        NoisyImage n = add_gaussian_noise(images[i], model, i);
        const std::string stem = fs::path(a.inputs[i]).stem().string();
        write_image(n.preview, fs::path(a.out_dir) / (stem + ".png"));
        targets.push_back({stem, std::move(n.target)});
    }
    save_tensors(targets, fs::path(a.out_dir) / "targets.gpdw");
    json resolved = {{"command", "corrupt"}, {"input", a.inputs}, {"out-dir", a.out_dir},
                     {"sigma", a.sigma},     {"seed", a.seed}};
    write_resolved(resolved, fs::path(a.out_dir) / "config.json");
    log_line("corrupted " + std::to_string(images.size()) + " images at sigma " + fmt(a.sigma));
    return 0;
}

struct RecoverArgs {
    std::string weights, targets, out, trace;
    std::vector<std::string> inputs;
    std::uint64_t seed = 1;
    RecoveryFlags rec;
};

int cmd_recover(RecoverArgs& a, unsigned jobs) {
    require_flag(!a.weights.empty(), "-g/--weights");
    require_flag(!a.out.empty(), "-o/--out");
    const RecoveryConfig cfg = a.rec.resolve(a.seed);
    const GeneratorNet net = load_weights(a.weights);
    const TargetSet set = load_targets(a.inputs, a.targets, net);
    const auto results = recover_batch(net, set.tensors, cfg, jobs);
    std::vector<LatentVector> zs;
    std::vector<std::uint64_t> ids;
    json per_image = json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        zs.push_back(results[i].z_hat);
        ids.push_back(i);
        per_image.push_back({{"name", set.names[i]},
                             {"final_loss", results[i].final_loss},
                             {"iterations", results[i].iterations_used},
                             {"restart", results[i].restart_index}});
    }
    json resolved = a.rec.to_json();
    resolved.update({{"command", "recover"}, {"weights", a.weights}, {"input", a.inputs}, {"targets", a.targets},
                     {"out", a.out}, {"seed", a.seed}});
    const fs::path out = a.out;
    const fs::path trace = a.trace.empty() ? sibling(out, ".trace.csv") : fs::path(a.trace);
    resolved["trace"] = trace.string();
    ensure_dir(out.parent_path());
    save_latents(zs, {{"config", resolved}, {"results", per_image}}, out);
    write_text_atomic(trace, trace_csv(results, ids));
    write_resolved(resolved, sibling(out, ".config.json"));
    log_line("recovered " + std::to_string(results.size()) + " latent vectors");
    return 0;
}

struct DenoiseArgs {
    std::string weights, targets, out, out_dir, trace, sharpness;
    std::vector<std::string> inputs;
    std::uint64_t seed = 1;
    double sigma = -1;
    RecoveryFlags rec;
};

int cmd_denoise(DenoiseArgs& a, unsigned jobs) {
    require_flag(!a.weights.empty(), "-g/--weights");
    if (a.out.empty() == a.out_dir.empty()) throw ConfigError("give exactly one of -o/--out and --out-dir");
    if (!a.sharpness.empty() && a.sigma < 0) {
        throw ConfigError("--sharpness needs the noise level: pass --sigma");
    }
    const RecoveryConfig cfg = a.rec.resolve(a.seed);
    const GeneratorNet net = load_weights(a.weights);
    const TargetSet set = load_targets(a.inputs, a.targets, net);
    if (!a.out.empty() && set.tensors.size() != 1) throw ConfigError("-o/--out takes one input; use --out-dir");
    std::optional<SharpnessAttribute> attr;
    if (!a.sharpness.empty()) {
        attr = load_sharpness(a.sharpness);
        if (attr->vector.size() != net.input_dim()) {
            throw ShapeError("sharpness vector dimension " + std::to_string(attr->vector.size()) +
                             " does not match generator input " + std::to_string(net.input_dim()));
        }
        if (attr->sigma != a.sigma) {
            warn("sharpness attribute was estimated for sigma " + fmt(attr->sigma) + ", applying at sigma " +
                 fmt(a.sigma));
        }
    }
    const auto results = recover_batch(net, set.tensors, cfg, jobs);
    std::vector<fs::path> outs;
    if (!a.out.empty()) {
        outs.push_back(a.out);
    } else {
        for (const auto& name : set.names) outs.push_back(fs::path(a.out_dir) / (name + ".png"));
    }
    const fs::path base = !a.out.empty() ? fs::path(a.out) : fs::path(a.out_dir) / "denoise";
    const fs::path trace = a.trace.empty() ? sibling(base, ".trace.csv") : fs::path(a.trace);
    ensure_dir(a.out_dir.empty() ? fs::path(a.out).parent_path() : fs::path(a.out_dir));
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const LatentVector z = attr ? apply_sharpness(results[i].z_hat, *attr) : results[i].z_hat;
        write_image(denormalize(gen_forward(net, z)), outs[i]);
        ids.push_back(i);
    }
    write_text_atomic(trace, trace_csv(results, ids));
    json resolved = a.rec.to_json();
    resolved.update({{"command", "denoise"},
                     {"weights", a.weights},
                     {"input", a.inputs},
                     {"targets", a.targets},
                     {"out", a.out},
                     {"out-dir", a.out_dir},
                     {"trace", trace.string()},
                     {"seed", a.seed},
                     {"method", attr ? "lvr-sa" : "lvr"},
                     {"sharpness", a.sharpness}});
    if (a.sigma >= 0) resolved["sigma"] = a.sigma;
    write_resolved(resolved, sibling(base, ".config.json"));
    log_line(std::string("denoised ") + std::to_string(results.size()) + " image(s) with " +
             (attr ? "LVR-SA" : "LVR"));
    return 0;
}

struct SharpnessArgs {
    std::string weights, out;
    std::vector<double> sigmas;
    std::size_t n = 400;
    std::uint64_t seed = 1;
    RecoveryFlags rec;
};

int cmd_estimate_sharpness(SharpnessArgs& a, unsigned jobs) {
    require_flag(!a.weights.empty(), "-g/--weights");
    require_flag(!a.out.empty(), "-o/--out");
    require_flag(!a.sigmas.empty(), "--sigma");
    for (double s : a.sigmas)
        if (!(s >= 0)) throw ConfigError("--sigma values must be >= 0");
    const RecoveryConfig cfg = a.rec.resolve(a.seed);
    const GeneratorNet net = load_weights(a.weights);
    const auto attrs = estimate_sharpness(net, a.sigmas, a.n, cfg, a.seed, {1.0, jobs});
    const fs::path out = a.out;
    ensure_dir(out.parent_path());
    std::vector<std::string> written;
    for (const auto& attr : attrs) {
        fs::path p = out;
        if (attrs.size() > 1) {
            p = out.parent_path() / (out.stem().string() + "_" + fmt(attr.sigma) + out.extension().string());
        }
        save_sharpness(attr, p);
        written.push_back(p.string());
    }
    json resolved = a.rec.to_json();
    resolved.update({{"command", "estimate-sharpness"}, {"weights", a.weights}, {"out", a.out},
                     {"sigma", a.sigmas}, {"n", a.n}, {"seed", a.seed}, {"written", written}});
    write_resolved(resolved, sibling(out, ".config.json"));
    for (const auto& w : written) log_line("wrote " + w);
    return 0;
}

struct EvalArgs {
    std::string clean_dir, csv, summary;
    std::vector<std::string> candidates;
    double sigma = -1;
};

std::vector<fs::path> image_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".pgm" || ext == ".ppm")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_eval(EvalArgs& a, unsigned jobs) {
    require_flag(!a.clean_dir.empty(), "--clean");
    require_flag(!a.candidates.empty(), "--candidate");
    require_flag(a.sigma >= 0, "--sigma");
    require_flag(!a.csv.empty(), "--csv");
    const auto clean_files = image_files(a.clean_dir);
    if (clean_files.empty()) throw ConfigError("--clean directory holds no images");
    std::vector<Image> clean;
    for (const auto& f : clean_files) clean.push_back(read_image(f));
    std::vector<Candidate> cands;
    for (const auto& spec : a.candidates) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--candidate takes METHOD=DIR, got '" + spec + "'");
        Candidate c{spec.substr(0, eq), {}};
        const fs::path dir = spec.substr(eq + 1);
        for (const auto& f : clean_files) c.images.push_back(read_image(dir / f.filename()));
        cands.push_back(std::move(c));
    }
    const EvalReport report = batch_eval(clean, cands, std::vector<double>(clean.size(), a.sigma), jobs);
    const fs::path csv = a.csv;
    ensure_dir(csv.parent_path());
    write_text_atomic(csv, records_csv(report.records));
    const fs::path summary = a.summary.empty() ? sibling(csv, ".summary.json") : fs::path(a.summary);
    write_text_atomic(summary, summary_json(report.summary).dump(2) + "\n");
    json resolved = {{"command", "eval"}, {"clean", a.clean_dir}, {"candidate", a.candidates}, {"sigma", a.sigma},
                     {"csv", a.csv},      {"summary", summary.string()}};
    write_resolved(resolved, sibling(csv, ".config.json"));
    for (const auto& row : report.summary) {
        log_line(row.method + " sigma " + fmt(row.sigma) + ": mean PSNR " + fmt(row.mean_psnr) + " dB over " +
                 std::to_string(row.n));
    }
    return 0;
}

struct SelfcheckArgs {
    SelfcheckOptions opt;
};

int cmd_selfcheck(SelfcheckArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const SelfcheckReport report = run_selfcheck(a.opt);
    std::cout << report.text();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line("selfcheck took " + fmt(std::round(secs * 10) / 10) + " s");
    if (!report.passed()) {
        for (const auto& c : report.checks)
            if (!c.passed) std::cerr << "ganproj: failed check: " << c.name << (c.detail.empty() ? "" : ": ") << c.detail << "\n";
        return kExitSelfcheck;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-vector recovery and denoising on a small DCGAN manifold"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ganproj 0.1.0");
    std::string config_path;
    unsigned jobs = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON file with option values (flags take precedence)");
        sub->add_option("--jobs", jobs, "Worker threads (default: all cores)");
        sub->add_flag("-q,--quiet", g_quiet, "Suppress progress logging");
    };

    TrainArgs train_a;
    auto* train_cmd = app.add_subcommand("train", "Train a generator on the disc corpus or an image directory");
    common(train_cmd);
    train_cmd->add_option("-o,--out", train_a.out, "Checkpoint path (.gpdw)");
    train_cmd->add_option("--loss-csv", train_a.loss_csv, "Loss history CSV (default: <out>.loss.csv)");
    train_cmd->add_option("--steps", train_a.cfg.steps, "Training steps");
    train_cmd->add_option("--batch-size", train_a.cfg.batch_size, "Batch size (>= 2)");
    train_cmd->add_option("--lr", train_a.cfg.adam.lr, "Adam learning rate");
    train_cmd->add_option("--beta1", train_a.cfg.adam.beta1);
    train_cmd->add_option("--beta2", train_a.cfg.adam.beta2);
    train_cmd->add_option("--adam-eps", train_a.cfg.adam.eps);
    train_cmd->add_option("--seed", train_a.cfg.seed, "Seed for initialization and batches");
    train_cmd->add_option("--profile", train_a.profile, "toy (d=16, 1 channel) or full (d=100, 3 channels)");
    train_cmd->add_option("--latent-dim", train_a.latent_dim, "Override the profile's latent dimension");
    train_cmd->add_option("--disc-width", train_a.cfg.disc_width, "Discriminator base width");
    train_cmd->add_option("--checkpoint-every", train_a.cfg.checkpoint_every, "Steps between checkpoints (0 = off)");
    train_cmd->add_option("--checkpoint-dir", train_a.checkpoint_dir);
    train_cmd->add_option("--data", train_a.data_dir, "Directory of 32x32 training images instead of the disc corpus");
    train_cmd->add_option("--dataset-count", train_a.data.count, "Disc corpus size");
    train_cmd->add_option("--dataset-seed", train_a.data.seed, "Disc corpus seed");

    GenerateArgs gen_a;
    auto* gen_cmd = app.add_subcommand("generate", "Sample images from a generator");
    common(gen_cmd);
    gen_cmd->add_option("-g,--weights", gen_a.weights, "Generator weights");
    gen_cmd->add_option("--out-dir", gen_a.out_dir);
    gen_cmd->add_option("-n,--count", gen_a.count);
    gen_cmd->add_option("--seed", gen_a.seed);

    CorruptArgs cor_a;
    auto* cor_cmd = app.add_subcommand("corrupt", "Add Gaussian noise (sigma = std in pixel units)");
    common(cor_cmd);
    cor_cmd->add_option("-i,--input", cor_a.inputs, "Input images");
    cor_cmd->add_option("--out-dir", cor_a.out_dir, "Receives clamped previews and unclamped targets.gpdw");
    cor_cmd->add_option("--sigma", cor_a.sigma);
    cor_cmd->add_option("--seed", cor_a.seed);

    RecoverArgs rec_a;
    auto* rec_cmd = app.add_subcommand("recover", "Recover latent vectors for target images");
    common(rec_cmd);
    rec_cmd->add_option("-g,--weights", rec_a.weights);
    rec_cmd->add_option("-i,--input", rec_a.inputs, "Target images");
    rec_cmd->add_option("--targets", rec_a.targets, "Unclamped targets written by corrupt");
    rec_cmd->add_option("-o,--out", rec_a.out, "Latent JSON output");
    rec_cmd->add_option("--trace", rec_a.trace, "Trace CSV (default: <out>.trace.csv)");
    rec_cmd->add_option("--seed", rec_a.seed);
    rec_a.rec.add_to(rec_cmd);

    DenoiseArgs den_a;
    auto* den_cmd = app.add_subcommand("denoise", "Project noisy images onto the generator manifold");
    common(den_cmd);
    den_cmd->add_option("-g,--weights", den_a.weights);
    den_cmd->add_option("-i,--input", den_a.inputs, "Noisy images");
    den_cmd->add_option("--targets", den_a.targets, "Unclamped targets written by corrupt");
    den_cmd->add_option("-o,--out", den_a.out, "Output image (single input)");
    den_cmd->add_option("--out-dir", den_a.out_dir, "Output directory (one image per input)");
    den_cmd->add_option("--trace", den_a.trace, "Trace CSV");
    den_cmd->add_option("--sigma", den_a.sigma, "Noise level; only needed with --sharpness");
    den_cmd->add_option("--sharpness", den_a.sharpness, "Sharpness attribute JSON (LVR-SA)");
    den_cmd->add_option("--seed", den_a.seed);
    den_a.rec.add_to(den_cmd);

    SharpnessArgs sh_a;
    auto* sh_cmd = app.add_subcommand("estimate-sharpness", "Estimate sharpness attributes per noise level");
    common(sh_cmd);
    sh_cmd->add_option("-g,--weights", sh_a.weights);
    sh_cmd->add_option("--sigma", sh_a.sigmas, "Noise levels (repeatable)");
    sh_cmd->add_option("-n,--n-samples", sh_a.n, "Generated samples per level");
    sh_cmd->add_option("-o,--out", sh_a.out, "Attribute JSON (suffixed _<sigma> for several levels)");
    sh_cmd->add_option("--seed", sh_a.seed);
    sh_a.rec.add_to(sh_cmd);

    EvalArgs ev_a;
    auto* ev_cmd = app.add_subcommand("eval", "Score candidate images against clean ones (MSE, PSNR)");
    common(ev_cmd);
    ev_cmd->add_option("--clean", ev_a.clean_dir, "Directory of clean images");
    ev_cmd->add_option("--candidate", ev_a.candidates, "METHOD=DIR with same file names (repeatable)");
    ev_cmd->add_option("--sigma", ev_a.sigma, "Noise level of the inputs");
    ev_cmd->add_option("--csv", ev_a.csv, "Per-image CSV");
    ev_cmd->add_option("--summary", ev_a.summary, "Summary JSON (default: <csv>.summary.json)");

    SelfcheckArgs sc_a;
    auto* sc_cmd = app.add_subcommand("selfcheck", "Gradient and oracle checks");
    common(sc_cmd);
    sc_cmd->add_option("--seed", sc_a.opt.seed);
    sc_cmd->add_option("--triples", sc_a.opt.triples);
    sc_cmd->add_option("--inject-fault", sc_a.opt.inject_fault, "Corrupt one layer kind's backward (test fixture)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        if (!config_path.empty()) merge_config_file(*sub, config_path);
        if (sub == train_cmd) return cmd_train(train_a);
        if (sub == gen_cmd) return cmd_generate(gen_a);
        if (sub == cor_cmd) return cmd_corrupt(cor_a);
        if (sub == rec_cmd) return cmd_recover(rec_a, jobs);
        if (sub == den_cmd) return cmd_denoise(den_a, jobs);
        if (sub == sh_cmd) return cmd_estimate_sharpness(sh_a, jobs);
        if (sub == ev_cmd) return cmd_eval(ev_a, jobs);
        if (sub == sc_cmd) return cmd_selfcheck(sc_a);
        throw ConfigError("unknown subcommand");
    } catch (const ConfigError& e) {
        std::cerr << "ganproj: error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "ganproj: error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "ganproj: numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "ganproj: I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "ganproj: I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "ganproj: I/O error: " << e.what() << "\n";
        return kExitIo;
    }
}
