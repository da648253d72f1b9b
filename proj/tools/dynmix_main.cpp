// dynmix command line: synthesize, train, evaluate, forecast, sweep and
// cluster export for the dynamic-mixture forecasting engine.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dynmix/evalcast.hpp"
#include "dynmix/rng.hpp"
#include "dynmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace dynmix;

namespace {

void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw Error("cannot write file: " + tmp);
        out << content;
        if (!out) throw Error("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

std::string format_csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct CommonOpts {
    std::string data;
    std::string out = ".";
    std::string checkpoint;
    std::string gamma_str = "0.01";
    int window_flag = -1;   // -1: not given
    int horizon_flag = -1;  // -1: not given
    train::TrainConfig cfg;
    double train_frac = 0.7, valid_frac = 0.1, test_frac = 0.2;
    double delta = 0.0;
    bool wide = false;
    bool no_normalize = false;
    std::string cell = "gru";
};

void add_hyper_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--k", o.cfg.k, "Number of mixture components")->check(CLI::Range(1, 200));
    cmd->add_option("--gamma", o.gamma_str,
                    "Basis mixing weight in [0,1], or 'gate' for the learned gate");
    cmd->add_option("--sigma", o.cfg.sigma, "Emission precision (positive)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--hidden-dim", o.cfg.hidden_dim, "RNN hidden width")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--window", o.window_flag, "Observed window length (0: full series)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--horizon", o.horizon_flag, "Forecast horizon")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", o.cfg.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch-size", o.cfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", o.cfg.lr, "Learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.cfg.seed, "Master seed; all sub-seeds derive from it");
    cmd->add_option("--temperature-start", o.cfg.temperature_start, "Initial Gumbel temperature")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--temperature-end", o.cfg.temperature_end, "Final Gumbel temperature")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--patience", o.cfg.patience, "Early-stop patience in epochs")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--samples-S", o.cfg.samples_S, "Ancestral samples per ELBO")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--sigma-warmup-epochs", o.cfg.sigma_warmup_epochs,
                    "Anneal the training precision up to sigma over this many epochs")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--restarts", o.cfg.restarts,
                    "Initializations probed before committing the epoch budget")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--probe-epochs", o.cfg.probe_epochs,
                    "Probe length per restart (0: derived from the warmup)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--cell", o.cell, "Recurrent cell: gru or lstm")
        ->check(CLI::IsMember({"gru", "lstm"}));
}

void add_split_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--train-frac", o.train_frac, "Train fraction");
    cmd->add_option("--valid-frac", o.valid_frac, "Valid fraction");
    cmd->add_option("--test-frac", o.test_frac, "Test fraction");
}

void finalize_config(CommonOpts& o) {
    if (o.window_flag >= 0) o.cfg.window = o.window_flag;
    if (o.horizon_flag >= 0) o.cfg.horizon = o.horizon_flag;
    if (o.gamma_str == "gate") {
        o.cfg.use_gate = true;
        o.cfg.gamma = 0.0;
    } else {
        try {
            size_t pos = 0;
            o.cfg.gamma = std::stod(o.gamma_str, &pos);
            if (pos != o.gamma_str.size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw CLI::ValidationError("--gamma", "expected a number in [0,1] or 'gate'");
        }
        if (o.cfg.gamma < 0.0 || o.cfg.gamma > 1.0)
            throw CLI::ValidationError("--gamma", "expected a number in [0,1] or 'gate'");
    }
    o.cfg.cell = o.cell == "lstm" ? model::CellType::Lstm : model::CellType::Gru;
}

std::vector<data::MtsSample> load_samples(const CommonOpts& o) {
    auto samples = o.wide ? data::load_wide_csv(o.data) : data::load_long_csv(o.data);
    return data::align_to_grid(samples);
}

int dataset_dim(const std::vector<data::MtsSample>& samples) {
    int d = 0;
    for (const auto& s : samples) d = std::max(d, s.d());
    return d;
}

std::string dataset_name(const std::string& path) {
    return fs::path(path).stem().string();
}

data::ForecastTask task_from(const train::TrainConfig& cfg,
                             const std::vector<data::MtsSample>& samples) {
    int window = cfg.window;
    if (window == 0) {
        int min_w = samples.empty() ? 0 : samples[0].w();
        for (const auto& s : samples) min_w = std::min(min_w, s.w());
        window = min_w - cfg.horizon;
    }
    require(window >= 2, "window too short; give --window >= 2");
    return {window, cfg.horizon};
}

std::vector<data::MtsSample> apply_norm(const std::vector<data::MtsSample>& samples,
                                        const std::optional<data::NormStats>& st) {
    return st ? data::normalize(samples, *st) : samples;
}

int cmd_synthesize(CommonOpts& o, int d, int w, int n) {
    finalize_config(o);
    require(o.delta >= 0.0 && o.delta <= 1.0, "--delta must be in [0,1]");
    fs::create_directories(o.out);
    auto [samples, gt] = data::synthesize(o.cfg.k, d, w, n, o.cfg.sigma, o.cfg.gamma,
                                          o.cfg.seed);
    if (o.delta > 0.0) {
        for (size_t i = 0; i < samples.size(); ++i)
            samples[i] = data::corrupt(samples[i], o.delta,
                                       rng::derive_seed(o.cfg.seed, "corrupt", i));
    }
    std::string data_path = (fs::path(o.out) / "data.csv").string();
    {
        std::string tmp = data_path + ".tmp";
        data::write_long_csv(tmp, samples);
        fs::rename(tmp, data_path);
    }
    atomic_write((fs::path(o.out) / "ground_truth.json").string(), gt.to_json() + "\n");
    std::cout << "wrote " << data_path << " (" << samples.size() << " samples, d=" << d
              << ", w=" << w << ")\n";
    return 0;
}

int cmd_train(CommonOpts& o) {
    finalize_config(o);
    fs::create_directories(o.out);
    auto samples = load_samples(o);
    int d = dataset_dim(samples);
    data::SplitSpec spec{o.train_frac, o.valid_frac, o.test_frac, o.cfg.seed};
    data::Splits splits = data::split(samples, spec);
    require(!splits.train.empty(), "train split is empty");
    require(!splits.valid.empty(), "valid split is empty; increase --valid-frac");

    std::optional<data::NormStats> stats;
    if (!o.no_normalize) {
        stats = data::NormStats::compute(splits.train, d);
        splits.train = data::normalize(splits.train, *stats);
        splits.valid = data::normalize(splits.valid, *stats);
    }
    if (o.delta > 0.0) {
        for (size_t i = 0; i < splits.train.size(); ++i)
            splits.train[i] = data::corrupt(splits.train[i], o.delta,
                                            rng::derive_seed(o.cfg.seed, "corrupt-train", i));
        for (size_t i = 0; i < splits.valid.size(); ++i)
            splits.valid[i] = data::corrupt(splits.valid[i], o.delta,
                                            rng::derive_seed(o.cfg.seed, "corrupt-valid", i));
    }

    std::vector<data::MtsSample> train_in, valid_in;
    data::ForecastTask task = task_from(o.cfg, samples);
    for (const auto& s : splits.train) train_in.push_back(s.prefix(std::min(task.window, s.w())));
    for (const auto& s : splits.valid) valid_in.push_back(s.prefix(std::min(task.window, s.w())));

    train::TrainResult res = train::fit(train_in, valid_in, o.cfg, d);
    res.params.norm_stats = stats;
    res.params.config.window = task.window;
    train::checkpoint_save(res.params, (fs::path(o.out) / "checkpoint.json").string());
    train::write_training_log((fs::path(o.out) / "training_log.csv").string(), res.log);
    std::cout << "trained " << res.log.size() << " epochs; best epoch " << res.best_epoch
              << " (valid neg-ELBO " << res.best_valid << ")\n"
              << "wrote " << (fs::path(o.out) / "checkpoint.json").string() << "\n";
    return 0;
}

int cmd_evaluate(CommonOpts& o) {
    finalize_config(o);
    fs::create_directories(o.out);
    train::ModelParams params = train::checkpoint_load(o.checkpoint);
    if (o.window_flag >= 0) params.config.window = o.window_flag;
    if (o.horizon_flag >= 0) params.config.horizon = o.horizon_flag;
    auto samples = load_samples(o);
    data::SplitSpec spec{o.train_frac, o.valid_frac, o.test_frac, o.cfg.seed};
    data::Splits splits = data::split(samples, spec);
    require(!splits.test.empty(), "test split is empty");
    auto test = apply_norm(splits.test, params.norm_stats);
    data::ForecastTask task{params.config.window, params.config.horizon};
    eval::SplitEvaluation ev = eval::evaluate_split(params, test, task);

    std::vector<eval::SweepRow> rows = {
        {"dynmix", o.delta, o.cfg.seed, ev.model.rmse, ev.model.mae, ev.model.n_scored},
        {"mean", o.delta, o.cfg.seed, ev.mean_baseline.rmse, ev.mean_baseline.mae,
         ev.mean_baseline.n_scored},
        {"locf", o.delta, o.cfg.seed, ev.locf_baseline.rmse, ev.locf_baseline.mae,
         ev.locf_baseline.n_scored}};
    std::string path = (fs::path(o.out) / "metrics.csv").string();
    {
        std::ostringstream shadow;
        shadow << "dataset,model,delta,seed,rmse,mae,n_scored\n";
        for (const auto& r : rows)
            shadow << dataset_name(o.data) << ',' << r.model << ',' << format_csv_double(r.delta)
                   << ',' << r.seed << ',' << format_csv_double(r.rmse) << ','
                   << format_csv_double(r.mae) << ',' << r.n_scored << '\n';
        atomic_write(path, shadow.str());
    }
    std::cout << "report: pooled metrics over all observed target entries (window="
              << task.window << ", horizon=" << task.horizon << ")\n";
    std::cout << "model rmse " << ev.model.rmse << " mae " << ev.model.mae << " (n="
              << ev.model.n_scored << ")\n";
    std::cout << "mean-baseline rmse " << ev.mean_baseline.rmse << ", locf rmse "
              << ev.locf_baseline.rmse << "\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_forecast(CommonOpts& o) {
    finalize_config(o);
    fs::create_directories(o.out);
    train::ModelParams params = train::checkpoint_load(o.checkpoint);
    if (o.window_flag >= 0) params.config.window = o.window_flag;
    if (o.horizon_flag >= 0) params.config.horizon = o.horizon_flag;
    auto samples = apply_norm(load_samples(o), params.norm_stats);
    int window = params.config.window, horizon = params.config.horizon;
    require(window >= 2, "checkpoint has no window; pass --window");

    std::ostringstream out;
    out << "sample_id,t,variable,prediction\n";
    for (const auto& s : samples) {
        require(s.w() >= window, "sample " + s.id + " shorter than the window");
        eval::ForecastResult fr = eval::forecast(params, s.prefix(window), horizon);
        for (int j = 0; j < horizon; ++j)
            for (int i = 0; i < s.d(); ++i)
                out << s.id << ',' << window + 1 + j << ',' << i << ','
                    << format_csv_double(fr.predictions.at(i, j)) << '\n';
    }
    std::string path = (fs::path(o.out) / "forecasts.csv").string();
    atomic_write(path, out.str());
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_sweep(CommonOpts& o, std::vector<double>& deltas, std::vector<uint64_t>& seeds) {
    finalize_config(o);
    fs::create_directories(o.out);
    require(!deltas.empty(), "--deltas must list at least one value");
    require(!seeds.empty(), "--seeds must list at least one value");
    auto samples = load_samples(o);
    int d = dataset_dim(samples);
    data::SplitSpec spec{o.train_frac, o.valid_frac, o.test_frac, o.cfg.seed};
    data::Splits splits = data::split(samples, spec);
    std::optional<data::NormStats> stats;
    if (!o.no_normalize) {
        stats = data::NormStats::compute(splits.train, d);
        splits.train = data::normalize(splits.train, *stats);
        splits.valid = data::normalize(splits.valid, *stats);
        splits.test = data::normalize(splits.test, *stats);
    }
    data::ForecastTask task = task_from(o.cfg, samples);
    train::TrainConfig cfg = o.cfg;
    cfg.window = task.window;
    auto rows = eval::robustness_sweep(cfg, splits, d, task, deltas, seeds);
    std::string path = (fs::path(o.out) / "sweep.csv").string();
    {
        std::ostringstream shadow;
        shadow << "dataset,model,delta,seed,rmse,mae,n_scored\n";
        for (const auto& r : rows)
            shadow << dataset_name(o.data) << ',' << r.model << ',' << format_csv_double(r.delta)
                   << ',' << r.seed << ',' << format_csv_double(r.rmse) << ','
                   << format_csv_double(r.mae) << ',' << r.n_scored << '\n';
        atomic_write(path, shadow.str());
    }
    std::cout << "wrote " << path << " (" << rows.size() << " rows)\n";
    return 0;
}

int cmd_export_clusters(CommonOpts& o) {
    finalize_config(o);
    fs::create_directories(o.out);
    train::ModelParams params = train::checkpoint_load(o.checkpoint);
    auto samples = apply_norm(load_samples(o), params.norm_stats);
    std::ostringstream out;
    out << "sample_id,t,argmax_z,prob\n";
    for (const auto& s : samples) {
        impute::DenseMts dense = impute::dense_impute(s, params.pre);
        infer::InferenceResult fwd =
            infer::infer_forward(dense, s.ref_times, params.inf, 1.0, 0);
        for (int t = 0; t < s.w(); ++t) {
            int best = 0;
            for (int r = 1; r < params.config.k; ++r)
                if (fwd.seq.marginals.at(t, r) > fwd.seq.marginals.at(t, best)) best = r;
            out << s.id << ',' << t + 1 << ',' << best << ','
                << format_csv_double(fwd.seq.marginals.at(t, best)) << '\n';
        }
    }
    std::string path = (fs::path(o.out) / "clusters.csv").string();
    atomic_write(path, out.str());
    std::cout << "wrote " << path << "\n";

    // Mixture summary for external plotting.
    std::ostringstream mj;
    mj << "{\n  \"means\": [";
    for (int r = 0; r < params.config.k; ++r) {
        mj << (r ? ", [" : "[");
        for (int i = 0; i < params.d; ++i)
            mj << (i ? ", " : "")
               << format_csv_double(params.basis.means.value.data[r * params.d + i]);
        mj << "]";
    }
    mj << "],\n  \"basis_probs\": [";
    for (int r = 0; r < params.config.k; ++r)
        mj << (r ? ", " : "") << format_csv_double(params.basis.basis_probs[r]);
    mj << "]\n}\n";
    atomic_write((fs::path(o.out) / "mixture.json").string(), mj.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynmix: dynamic-mixture forecasting for sparse multivariate time series"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "",
                   "TOML config file with [subcommand] sections; flags take precedence");

    CommonOpts o;
    int synth_d = 2, synth_w = 20, synth_n = 100;

    CLI::App* synth = app.add_subcommand("synthesize", "Generate data from the generative process");
    add_hyper_flags(synth, o);
    synth->get_option("--k")->required();
    synth->add_option("--d", synth_d, "Number of variables")->check(CLI::PositiveNumber);
    synth->add_option("--w", synth_w, "Series length")->check(CLI::PositiveNumber);
    synth->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--delta", o.delta, "Fraction of observed entries to drop");
    synth->add_option("--out", o.out, "Output directory");

    CLI::App* tr = app.add_subcommand("train", "Train a model on a long-format CSV");
    add_hyper_flags(tr, o);
    add_split_flags(tr, o);
    tr->add_option("--data", o.data, "Input CSV")->required();
    tr->add_option("--out", o.out, "Output directory");
    tr->add_option("--delta", o.delta, "Corrupt train/valid by this fraction before training");
    tr->add_flag("--wide", o.wide, "Input is wide-format CSV");
    tr->add_flag("--no-normalize", o.no_normalize, "Skip per-variable z-scoring");

    CLI::App* ev = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
    add_hyper_flags(ev, o);
    add_split_flags(ev, o);
    ev->add_option("--data", o.data, "Input CSV")->required();
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
    ev->add_option("--out", o.out, "Output directory");
    ev->add_option("--delta", o.delta, "Delta column to record in the metrics CSV");
    ev->add_flag("--wide", o.wide, "Input is wide-format CSV");

    CLI::App* fc = app.add_subcommand("forecast", "Write horizon forecasts for every sample");
    add_hyper_flags(fc, o);
    fc->add_option("--data", o.data, "Input CSV")->required();
    fc->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
    fc->add_option("--out", o.out, "Output directory");
    fc->add_flag("--wide", o.wide, "Input is wide-format CSV");

    std::vector<double> deltas;
    std::vector<uint64_t> seeds;
    CLI::App* sw = app.add_subcommand("sweep", "Robustness sweep: retrain per corruption level");
    add_hyper_flags(sw, o);
    add_split_flags(sw, o);
    sw->add_option("--data", o.data, "Input CSV")->required();
    sw->add_option("--out", o.out, "Output directory");
    sw->add_option("--deltas", deltas, "Corruption fractions")->delimiter(',')->required();
    sw->add_option("--seeds", seeds, "Seeds, one retraining per (delta, seed)")
        ->delimiter(',')
        ->required();
    sw->add_flag("--wide", o.wide, "Input is wide-format CSV");
    sw->add_flag("--no-normalize", o.no_normalize, "Skip per-variable z-scoring");

    CLI::App* ex = app.add_subcommand("export-clusters", "Export per-step cluster assignments");
    add_hyper_flags(ex, o);
    ex->add_option("--data", o.data, "Input CSV")->required();
    ex->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
    ex->add_option("--out", o.out, "Output directory");
    ex->add_flag("--wide", o.wide, "Input is wide-format CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synthesize(o, synth_d, synth_w, synth_n);
        if (tr->parsed()) return cmd_train(o);
        if (ev->parsed()) return cmd_evaluate(o);
        if (fc->parsed()) return cmd_forecast(o);
        if (sw->parsed()) return cmd_sweep(o, deltas, seeds);
        if (ex->parsed()) return cmd_export_clusters(o);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
