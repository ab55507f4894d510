// Command-line entry point: dataset generation, three-phase training,
// mask-driven synthesis and downstream tasks, and the evaluation projections.
// Every run writes a key=value manifest alongside its outputs; re-running
// with the manifest's flags reproduces the outputs bitwise.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.
#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "interpomae/data.hpp"
#include "interpomae/eval.hpp"
#include "interpomae/generate.hpp"
#include "interpomae/model.hpp"
#include "interpomae/train.hpp"

namespace {

using namespace interpomae;

using Manifest = std::vector<std::pair<std::string, std::string>>;

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash '" + path + "'");
    std::uint64_t h = 0xCBF29CE484222325ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

void write_manifest(const std::string& path, const Manifest& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    for (const auto& [key, value] : entries) out << key << '=' << value << "\n";
}

std::vector<Series> load_dataset(const std::string& path, const std::string& id_col) {
    return load_csv(path, id_col);
}

struct MaskFlags {
    std::string mode = "uniform";
    std::size_t m = 0;
    std::size_t blocks = 1;
    std::size_t block_size = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--mask-mode", mode, "Mask spec: uniform or blocks")
            ->check(CLI::IsMember({"uniform", "blocks"}))
            ->capture_default_str();
        cmd->add_option("--mask-m", m, "Masked patch count (uniform mode)")
            ->capture_default_str();
        cmd->add_option("--mask-blocks", blocks, "Number of masked blocks (blocks mode)")
            ->capture_default_str();
        cmd->add_option("--mask-size", block_size, "Masked block length (blocks mode)")
            ->capture_default_str();
    }

    MaskSpec spec() const {
        if (mode == "uniform") return MaskSpec::uniform(m);
        return MaskSpec::blocks(blocks, block_size);
    }

    void describe(Manifest& man) const {
        man.emplace_back("mask_mode", mode);
        man.emplace_back("mask_m", std::to_string(m));
        man.emplace_back("mask_blocks", std::to_string(blocks));
        man.emplace_back("mask_size", std::to_string(block_size));
    }
};

// ---------------------------------------------------------------------------

int cmd_sines(std::size_t n, std::size_t len, std::size_t channels, std::uint64_t seed,
              const std::string& out) {
    const std::vector<Series> dataset = generate_sines(n, len, channels, seed);
    write_csv(out, dataset);
    write_manifest(out + ".manifest", {
                                          {"command", "sines"},
                                          {"n", std::to_string(n)},
                                          {"len", std::to_string(len)},
                                          {"channels", std::to_string(channels)},
                                          {"seed", std::to_string(seed)},
                                          {"out", out},
                                      });
    return 0;
}

struct TrainFlags {
    std::string data;
    std::string id_col = "id";
    std::size_t patch_len = 4;
    std::size_t latent_dim = 8;
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t enc_hidden = 24;
    std::size_t dec_hidden = 24;
    std::size_t interp_layers = 2;
    std::size_t interp_hidden = 0;  // 0 = 4*T*d
    std::size_t epochs1 = 200;
    std::size_t epochs2 = 200;
    std::size_t epochs3 = 400;
    std::size_t batch = 32;
    double lr = 1e-3;
    MaskFlags mask;
    std::uint64_t seed = 17;
    bool no_shuffle = false;
    std::string out_ckpt;
    std::string log;
};

int cmd_train(const TrainFlags& f) {
    const std::vector<Series> dataset = load_dataset(f.data, f.id_col);
    const std::size_t length = dataset.front().length();
    const std::size_t channels = dataset.front().channels();
    if (length % f.patch_len != 0) {
        throw std::runtime_error("patch length " + std::to_string(f.patch_len) +
                                 " does not divide series length " + std::to_string(length) +
                                 " (remainder " + std::to_string(length % f.patch_len) +
                                 "); pick --patch-len dividing the length exactly");
    }
    const std::size_t patch_count = length / f.patch_len;

    ModelConfig mc;
    mc.patch_count = patch_count;
    mc.patch_len = f.patch_len;
    mc.channels = channels;
    mc.latent_dim = f.latent_dim;
    mc.enc_layers = f.enc_layers;
    mc.dec_layers = f.dec_layers;
    mc.enc_hidden = f.enc_hidden;
    mc.dec_hidden = f.dec_hidden;
    mc.interp_layers = f.interp_layers;
    mc.interp_hidden = f.interp_hidden ? f.interp_hidden : 4 * patch_count * f.latent_dim;
    mc.seed = f.seed;

    TrainConfig tc;
    tc.phase1_epochs = f.epochs1;
    tc.phase2_epochs = f.epochs2;
    tc.phase3_epochs = f.epochs3;
    tc.batch_size = f.batch;
    tc.lr = f.lr;
    MaskFlags mask = f.mask;
    if (mask.mode == "uniform" && mask.m == 0) {
        mask.m = (patch_count + 2) / 3;  // default: ceil(T/3)
    }
    tc.mask_spec = mask.spec();
    tc.seed = f.seed;
    tc.shuffle = !f.no_shuffle;

    ModelBundle bundle = init_params(mc);
    bundle.norm = fit_normalizer(dataset);
    const std::vector<PatchGrid> grids = prepare_dataset(dataset, bundle.norm, f.patch_len);

    Checkpoint state = make_checkpoint(std::move(bundle), tc);
    std::vector<LossRecord> records;
    run_training(state, grids, [&](const LossRecord& rec) {
        records.push_back(rec);
        std::cerr << "phase " << rec.phase << " epoch " << rec.epoch << " loss " << rec.loss
                  << "\n";
    });
    save_checkpoint(f.out_ckpt, state);
    const std::string log_path = f.log.empty() ? f.out_ckpt + ".log.csv" : f.log;
    write_loss_log(log_path, records);

    Manifest man = {
        {"command", "train"},
        {"data", f.data},
        {"id_col", f.id_col},
        {"patch_len", std::to_string(f.patch_len)},
        {"latent_dim", std::to_string(f.latent_dim)},
        {"enc_layers", std::to_string(f.enc_layers)},
        {"dec_layers", std::to_string(f.dec_layers)},
        {"enc_hidden", std::to_string(f.enc_hidden)},
        {"dec_hidden", std::to_string(f.dec_hidden)},
        {"interp_layers", std::to_string(f.interp_layers)},
        {"interp_hidden", std::to_string(mc.interp_hidden)},
        {"epochs1", std::to_string(f.epochs1)},
        {"epochs2", std::to_string(f.epochs2)},
        {"epochs3", std::to_string(f.epochs3)},
        {"batch", std::to_string(f.batch)},
        {"lr", std::to_string(f.lr)},
    };
    mask.describe(man);
    man.emplace_back("shuffle", tc.shuffle ? "1" : "0");
    man.emplace_back("seed", std::to_string(f.seed));
    man.emplace_back("out_ckpt", f.out_ckpt);
    man.emplace_back("log", log_path);
    man.emplace_back("ckpt_hash", hex64(fnv1a_file(f.out_ckpt)));
    write_manifest(f.out_ckpt + ".manifest", man);
    return 0;
}

struct TaskFlags {
    std::string ckpt;
    std::string data;
    std::string id_col = "id";
    std::string out;
    MaskFlags mask;
    std::uint64_t seed = 17;
    std::size_t copies = 1;  // augment
    std::string missing;     // impute
};

MaskPattern parse_missing(const std::string& text, std::size_t patch_count) {
    MaskPattern out;
    out.total = patch_count;
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        std::size_t idx = 0;
        try {
            idx = static_cast<std::size_t>(std::stoull(token));
        } catch (const std::exception&) {
            throw std::runtime_error("cannot parse missing patch index '" + token + "'");
        }
        if (idx >= patch_count) {
            throw std::runtime_error("missing patch index " + std::to_string(idx) +
                                     " out of range for T=" + std::to_string(patch_count));
        }
        out.masked.push_back(idx);
    }
    std::sort(out.masked.begin(), out.masked.end());
    out.masked.erase(std::unique(out.masked.begin(), out.masked.end()), out.masked.end());
    return out;
}

int cmd_task(const std::string& command, const TaskFlags& f) {
    const Checkpoint ckpt = load_checkpoint(f.ckpt);
    const ModelBundle& bundle = ckpt.bundle;
    const std::vector<Series> dataset = load_dataset(f.data, f.id_col);

    std::vector<Series> outputs;
    if (command == "generate") {
        Rng rng(f.seed);
        for (const Series& s : dataset)
            outputs.push_back(synthesize(bundle, s, f.mask.spec(), rng));
    } else if (command == "denoise") {
        for (const Series& s : dataset) outputs.push_back(denoise(bundle, s));
    } else if (command == "impute") {
        const MaskPattern missing = parse_missing(f.missing, bundle.config.patch_count);
        for (const Series& s : dataset) outputs.push_back(impute(bundle, s, missing));
    } else {  // augment
        outputs = augment(bundle, dataset, f.copies, f.mask.spec(), f.seed);
    }
    write_csv(f.out, outputs);

    Manifest man = {
        {"command", command}, {"ckpt", f.ckpt}, {"data", f.data},
        {"id_col", f.id_col}, {"out", f.out},
    };
    if (command == "generate" || command == "augment") {
        f.mask.describe(man);
        man.emplace_back("seed", std::to_string(f.seed));
    }
    if (command == "augment") man.emplace_back("k", std::to_string(f.copies));
    if (command == "impute") man.emplace_back("missing", f.missing);
    man.emplace_back("ckpt_hash", hex64(fnv1a_file(f.ckpt)));
    man.emplace_back("out_rows", std::to_string(outputs.size()));
    write_manifest(f.out + ".manifest", man);
    return 0;
}

struct EvaluateFlags {
    std::string real;
    std::string synth;
    std::string id_col = "id";
    std::string out_dir;
    double perplexity = 30.0;
    std::size_t tsne_iters = 500;
    std::uint64_t seed = 7;
};

int cmd_evaluate(const EvaluateFlags& f) {
    const std::vector<Series> real = load_dataset(f.real, f.id_col);
    const std::vector<Series> synth = load_dataset(f.synth, f.id_col);
    std::filesystem::create_directories(f.out_dir);
    const std::string dir = f.out_dir + "/";

    // Projections run on series normalized with statistics fitted to the
    // real split only; the marginal report compares raw values.
    const NormStats stats = fit_normalizer(real);
    std::vector<Series> real_n, synth_n;
    real_n.reserve(real.size());
    synth_n.reserve(synth.size());
    for (const Series& s : real) real_n.push_back(apply_normalizer(stats, s));
    for (const Series& s : synth) synth_n.push_back(apply_normalizer(stats, s));
    const LabeledMatrix stacked = stack_real_synth(real_n, synth_n);

    const PcaResult pca = pca_project(stacked.rows, 2);
    ProjectionResult pca_proj{pca.coords, stacked.labels, "pca", pca.explained_variance};
    write_projection_csv(dir + "pca.csv", pca_proj);

    const TsneResult tsne = tsne_project(stacked.rows, f.perplexity, f.tsne_iters, f.seed);
    ProjectionResult tsne_proj{tsne.coords, stacked.labels, "tsne", {}};
    write_projection_csv(dir + "tsne.csv", tsne_proj);

    write_marginal_csv(dir + "marginal.csv", marginal_report(real, synth));

    std::string diversity_status = "skipped (no groups of 2+ synthetic copies)";
    const auto groups = group_by_source(synth);
    bool groups_ok = !groups.empty();
    for (const auto& g : groups) groups_ok = groups_ok && g.size() >= 2;
    if (groups_ok) {
        std::vector<std::string> labels;
        for (const auto& g : groups) {
            const std::string& id = g.front().id;
            const auto cut = id.rfind('#');
            labels.push_back(cut == std::string::npos ? id : id.substr(0, cut));
        }
        write_diversity_csv(dir + "diversity.csv", labels, diversity_report(groups));
        diversity_status = "diversity.csv";
    }

    write_manifest(dir + "manifest.txt",
                   {
                       {"command", "evaluate"},
                       {"real", f.real},
                       {"synth", f.synth},
                       {"id_col", f.id_col},
                       {"out_dir", f.out_dir},
                       {"perplexity", std::to_string(f.perplexity)},
                       {"tsne_iters", std::to_string(f.tsne_iters)},
                       {"seed", std::to_string(f.seed)},
                       {"pca_explained_variance",
                        std::to_string(pca.explained_variance[0]) + "," +
                            std::to_string(pca.explained_variance[1])},
                       {"tsne_final_kl", std::to_string(tsne.kl.back())},
                       {"diversity", diversity_status},
                   });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"InterpoMAE: masked time-series autoencoder with a latent interpolator"};
    app.require_subcommand(1);

    // sines
    std::size_t sines_n = 0, sines_len = 24, sines_channels = 5;
    std::uint64_t sines_seed = 17;
    std::string sines_out;
    CLI::App* sines = app.add_subcommand("sines", "Emit a synthetic Sines dataset CSV");
    sines->add_option("--n", sines_n, "Number of series")->required()->check(CLI::PositiveNumber);
    sines->add_option("--len", sines_len, "Steps per series")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sines->add_option("--channels", sines_channels, "Channels per series")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sines->add_option("--seed", sines_seed, "Generator seed")->capture_default_str();
    sines->add_option("--out", sines_out, "Output CSV path")->required();

    // train
    TrainFlags tf;
    CLI::App* train = app.add_subcommand("train", "Run the three training phases");
    train->add_option("--data", tf.data, "Training CSV")->required();
    train->add_option("--id-col", tf.id_col, "Id column name; empty for one ungrouped series")
        ->capture_default_str();
    train->add_option("--patch-len", tf.patch_len, "Steps per patch (P)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--latent-dim", tf.latent_dim, "Latent code width (d)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--enc-layers", tf.enc_layers, "Encoder GRU layers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--dec-layers", tf.dec_layers, "Decoder GRU layers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--enc-hidden", tf.enc_hidden, "Encoder hidden width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--dec-hidden", tf.dec_hidden, "Decoder hidden width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--interp-layers", tf.interp_layers, "Interpolator hidden layers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--interp-hidden", tf.interp_hidden,
                      "Interpolator hidden width (0 = 4*T*d)")
        ->capture_default_str();
    train->add_option("--epochs1", tf.epochs1, "Phase 1 epochs")->capture_default_str();
    train->add_option("--epochs2", tf.epochs2, "Phase 2 epochs")->capture_default_str();
    train->add_option("--epochs3", tf.epochs3, "Phase 3 epochs")->capture_default_str();
    train->add_option("--batch", tf.batch, "Batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--lr", tf.lr, "Adam learning rate")->capture_default_str();
    tf.mask.attach(train);
    train->add_option("--seed", tf.seed, "Training seed")->capture_default_str();
    train->add_flag("--no-shuffle", tf.no_shuffle, "Keep dataset order within epochs");
    train->add_option("--out-ckpt", tf.out_ckpt, "Checkpoint output path")->required();
    train->add_option("--log", tf.log, "Loss log CSV (default <ckpt>.log.csv)");

    // generate / denoise / impute / augment
    TaskFlags task;
    CLI::App* generate_cmd = app.add_subcommand("generate", "Mask-driven synthesis");
    CLI::App* denoise_cmd = app.add_subcommand("denoise", "Full-visibility reconstruction");
    CLI::App* impute_cmd = app.add_subcommand("impute", "Restore missing patches");
    CLI::App* augment_cmd = app.add_subcommand("augment", "k synthetic copies per series");
    for (CLI::App* cmd : {generate_cmd, denoise_cmd, impute_cmd, augment_cmd}) {
        cmd->add_option("--ckpt", task.ckpt, "Trained checkpoint")->required();
        cmd->add_option("--data", task.data, "Input CSV")->required();
        cmd->add_option("--id-col", task.id_col, "Id column name")->capture_default_str();
        cmd->add_option("--out", task.out, "Output CSV")->required();
    }
    task.mask.attach(generate_cmd);
    generate_cmd->add_option("--seed", task.seed, "Mask sampling seed")->capture_default_str();
    task.mask.attach(augment_cmd);
    augment_cmd->add_option("--seed", task.seed, "Root seed for sub-generators")
        ->capture_default_str();
    augment_cmd->add_option("--k", task.copies, "Copies per source series")
        ->required()
        ->check(CLI::PositiveNumber);
    impute_cmd->add_option("--missing", task.missing, "Comma-separated missing patch indices")
        ->required();

    // evaluate
    EvaluateFlags ef;
    CLI::App* evaluate = app.add_subcommand("evaluate", "Projection and report CSVs");
    evaluate->add_option("--real", ef.real, "Real dataset CSV")->required();
    evaluate->add_option("--synth", ef.synth, "Synthetic dataset CSV")->required();
    evaluate->add_option("--id-col", ef.id_col, "Id column name")->capture_default_str();
    evaluate->add_option("--out-dir", ef.out_dir, "Output directory")->required();
    evaluate->add_option("--perplexity", ef.perplexity, "t-SNE perplexity")
        ->capture_default_str();
    evaluate->add_option("--tsne-iters", ef.tsne_iters, "t-SNE iterations")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    evaluate->add_option("--seed", ef.seed, "t-SNE seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (sines->parsed())
            return cmd_sines(sines_n, sines_len, sines_channels, sines_seed, sines_out);
        if (train->parsed()) return cmd_train(tf);
        if (generate_cmd->parsed()) return cmd_task("generate", task);
        if (denoise_cmd->parsed()) return cmd_task("denoise", task);
        if (impute_cmd->parsed()) return cmd_task("impute", task);
        if (augment_cmd->parsed()) return cmd_task("augment", task);
        if (evaluate->parsed()) return cmd_evaluate(ef);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand selected\n";
    return 2;
}
