// ewt: train / denoise / eval / bench for the wavelet-transformer denoiser.
// Exit codes: 0 success, 2 usage/config, 3 I/O, 4 internal invariant breach.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ewt/train.hpp"

namespace fs = std::filesystem;
using namespace ewt;

namespace {

constexpr int kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitInternal = 4;

struct CliError {
    int code;
    std::string msg;
};

ModelConfig config_for_checkpoint(const ConfigFile& f) {
    ModelConfig mc;
    mc.in_channels = std::size_t(f.get_int("model.in_channels", 3));
    mc.embed_dim = std::size_t(f.get_int("model.embed_dim", 180));
    mc.window = std::size_t(f.get_int("model.window", 8));
    mc.heads = std::size_t(f.get_int("model.heads", 6));
    mc.num_dfeb = std::size_t(f.get_int("model.num_dfeb", 4));
    mc.blocks_per_dfeb = std::size_t(f.get_int("model.blocks_per_dfeb", 6));
    mc.lambda = f.get_real("model.lambda", 0.1);
    mc.wavelet_level = int(f.get_int("model.wavelet_level", 1));
    mc.validate();
    return mc;
}

// Checkpoints travel with a sidecar `<name>.ewt.cfg` describing the model so
// denoise/eval do not need the full run config.
void write_model_sidecar(const ModelConfig& mc, const std::string& ckpt_path) {
    std::ofstream f(ckpt_path + ".cfg");
    f << "schema_version = 1\n[model]\n";
    f << "in_channels = " << mc.in_channels << "\nembed_dim = " << mc.embed_dim
      << "\nwindow = " << mc.window << "\nheads = " << mc.heads << "\nnum_dfeb = " << mc.num_dfeb
      << "\nblocks_per_dfeb = " << mc.blocks_per_dfeb << "\nlambda = " << mc.lambda
      << "\nwavelet_level = " << mc.wavelet_level << "\n";
    if (!f) throw IoError("cannot write sidecar for " + ckpt_path);
}

ModelConfig read_model_sidecar(const std::string& ckpt_path) {
    std::string side = ckpt_path + ".cfg";
    if (!fs::exists(side))
        throw ConfigError("missing model sidecar " + side + " (expected next to the checkpoint)");
    return config_for_checkpoint(ConfigFile::parse_file(side));
}

int cmd_train(const std::string& config_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    if (rc.clean_dir.empty()) throw ConfigError("config: data.clean_dir is required for train");
    std::vector<Image> clean;
    for (const std::string& p : list_images(rc.clean_dir)) clean.push_back(load_image(p));
    fs::create_directories(rc.out_dir);

    std::ofstream log(rc.out_dir + "/metrics.csv");
    if (!log) throw IoError("cannot open " + rc.out_dir + "/metrics.csv");
    log << "step,loss,lr,seconds\n";
    log << std::setprecision(17);

    auto run = [&](auto tag) {
        using T = decltype(tag);
        Model<T> m = build<T>(rc.model, rc.train.seed);
        std::function<void(std::size_t, Model<T>&)> on_ckpt = [&](std::size_t step,
                                                                  Model<T>& model) {
            std::string path = rc.out_dir + "/ckpt_" + std::to_string(step) + ".ewt";
            save(model, path);
            write_model_sidecar(rc.model, path);
        };
        auto trace = train_loop(m, clean, rc.train, rc.noise, on_ckpt);
        for (const auto& s : trace)
            log << s.step << ',' << s.loss << ',' << s.lr << ',' << s.seconds << '\n';
        std::string final_path = rc.out_dir + "/model.ewt";
        save(m, final_path);
        write_model_sidecar(rc.model, final_path);
        std::cout << "trained " << rc.train.steps << " steps; first loss " << trace.front().loss
                  << ", final loss " << trace.back().loss << "\n"
                  << "checkpoint: " << final_path << "\nmetrics:    " << rc.out_dir
                  << "/metrics.csv\n";
    };
    if (rc.dtype == "f64")
        run(double{});
    else
        run(float{});
    return kExitOk;
}

template <typename T>
int denoise_with(const ModelConfig& mc, const std::string& model_path, const std::string& in_path,
                 const std::string& out_path, std::size_t tile, const std::string& ref_path) {
    Model<T> m = load<T>(mc, model_path);
    Image noisy = load_image(in_path);
    Image den = denoise_image(m, noisy, tile);
    Image clamped = den;
    clamped.clamp01();
    save_image(clamped, out_path);
    std::cout << "wrote " << out_path << "\n";
    if (!ref_path.empty()) {
        Image ref = load_image(ref_path);
        std::cout << "psnr_noisy=" << std::fixed << std::setprecision(2) << psnr(noisy, ref)
                  << "dB psnr_denoised=" << psnr(den, ref) << "dB\n";
    }
    return kExitOk;
}

template <typename T>
int eval_with(const ModelConfig& mc, const std::string& model_path, const std::string& dataset_dir,
              const NoiseSpec& spec, const std::string& csv_path) {
    Model<T> m = load<T>(mc, model_path);
    std::string clean_dir = dataset_dir;
    if (fs::is_directory(dataset_dir + "/clean")) clean_dir = dataset_dir + "/clean";
    auto rows = evaluate(m, clean_dir, spec);

    std::ostringstream csv;
    csv << "file,psnr_noisy,psnr_denoised\n" << std::fixed << std::setprecision(4);
    double mn = 0, md = 0;
    std::cout << "# eval: " << spec.describe() << " seed=" << spec.seed
              << " psnr=all-channels rng=" << SplitMix64::kAlgorithmId << "\n";
    std::cout << std::left << std::setw(28) << "file" << std::right << std::setw(12) << "noisy"
              << std::setw(12) << "denoised" << "\n";
    for (const auto& r : rows) {
        csv << r.file << ',' << r.psnr_noisy << ',' << r.psnr_denoised << '\n';
        std::cout << std::left << std::setw(28) << r.file << std::right << std::fixed
                  << std::setprecision(2) << std::setw(10) << r.psnr_noisy << "dB" << std::setw(10)
                  << r.psnr_denoised << "dB\n";
        mn += r.psnr_noisy;
        md += r.psnr_denoised;
    }
    mn /= double(rows.size());
    md /= double(rows.size());
    csv << "mean," << mn << ',' << md << '\n';
    std::cout << std::left << std::setw(28) << "mean" << std::right << std::setw(10) << mn << "dB"
              << std::setw(10) << md << "dB\n";
    if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        if (!f) throw IoError("cannot open " + csv_path);
        f << csv.str();
    }
    return kExitOk;
}

int cmd_bench(const std::string& config_path, const std::string& levels_arg, std::size_t size,
              std::size_t runs) {
    ModelConfig mc = config_for_checkpoint(ConfigFile::parse_file(config_path));
    std::vector<int> levels;
    std::istringstream ls(levels_arg);
    std::string tok;
    while (std::getline(ls, tok, ',')) {
        int l = std::stoi(tok);
        if (l < 0 || l > 4) throw ConfigError("bench: invalid level " + tok);
        levels.push_back(l);
    }
    std::cout << std::left << std::setw(7) << "level" << std::right << std::setw(12) << "params"
              << std::setw(16) << "flops(MAC)" << std::setw(16) << "act.elems" << std::setw(14)
              << "median(s)" << "\n";
    for (int l : levels) {
        BenchRow r = bench_level<float>(mc, l, size, runs);
        std::cout << std::left << std::setw(7) << r.level << std::right << std::setw(12) << r.params
                  << std::setw(16) << r.flops << std::setw(16) << r.footprint << std::setw(14)
                  << std::fixed << std::setprecision(4) << r.median_seconds << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EWT wavelet-transformer image denoiser"};
    app.require_subcommand(1);

    std::string config_path, model_path, in_path, out_path, ref_path, dataset_dir, csv_path;
    std::string noise_kind = "gaussian", levels = "1,2,3";
    double sigma = 25.0, peak = 30.0;
    std::uint64_t noise_seed = 7;
    std::size_t tile = 0, size = 64, runs = 20;

    auto* train = app.add_subcommand("train", "train a model from a run config");
    train->add_option("config", config_path, "run config file")->required();

    auto* denoise = app.add_subcommand("denoise", "denoise one image with a checkpoint");
    denoise->add_option("model", model_path, "checkpoint (.ewt)")->required();
    denoise->add_option("input", in_path, "noisy image (pgm/ppm)")->required();
    denoise->add_option("output", out_path, "output image path")->required();
    denoise->add_option("--tile", tile, "tile size for non-divisible inputs");
    denoise->add_option("--ref", ref_path, "clean reference; prints PSNR");

    auto* eval = app.add_subcommand("eval", "evaluate PSNR over a dataset directory");
    eval->add_option("model", model_path)->required();
    eval->add_option("dataset", dataset_dir, "dataset dir (uses <dir>/clean if present)")->required();
    eval->add_option("--noise", noise_kind, "gaussian|poisson|speckle");
    eval->add_option("--sigma", sigma, "noise sigma (0-255 scale)");
    eval->add_option("--peak", peak, "poisson peak");
    eval->add_option("--seed", noise_seed, "noise seed");
    eval->add_option("--csv", csv_path, "also write CSV here");

    auto* bench = app.add_subcommand("bench", "efficiency table across wavelet levels");
    bench->add_option("config", config_path, "model config file")->required();
    bench->add_option("--levels", levels, "comma-separated wavelet levels");
    bench->add_option("--size", size, "square input size");
    bench->add_option("--runs", runs, "timed runs per level (after 3 warmups)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) return cmd_train(config_path);
        if (*denoise) {
            ModelConfig mc = read_model_sidecar(model_path);
            return denoise_with<float>(mc, model_path, in_path, out_path, tile, ref_path);
        }
        if (*eval) {
            ModelConfig mc = read_model_sidecar(model_path);
            NoiseSpec spec{parse_noise_kind(noise_kind), sigma, peak, noise_seed};
            return eval_with<float>(mc, model_path, dataset_dir, spec, csv_path);
        }
        if (*bench) return cmd_bench(config_path, levels, size, runs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}
