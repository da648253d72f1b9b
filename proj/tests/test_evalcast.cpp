#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dynmix/evalcast.hpp"

using namespace dynmix;
using namespace dynmix::eval;

namespace {

data::MtsSample full_sample(int d, int w, uint64_t seed, double scale = 1.0) {
    rng::Engine eng(seed);
    data::MtsSample s;
    s.id = "e" + std::to_string(seed);
    s.values = Mat(d, w);
    s.mask = MaskMat(d, w, 1);
    s.ref_times.resize(w);
    for (int t = 0; t < w; ++t) s.ref_times[t] = t + 1;
    for (double& v : s.values.a) v = scale * eng.normal();
    return s;
}

train::ModelParams model_with(const train::TrainConfig& cfg, int d, uint64_t seed,
                              double scale) {
    train::ModelParams mp = train::ModelParams::init(cfg, d);
    rng::Engine eng(seed);
    for (auto* p : mp.parameters())
        for (double& v : p->value.data) v = scale * eng.normal();
    mp.pre.pin_rho_diagonal();
    return mp;
}

}  // namespace

TEST_CASE("forecast with k=1 repeats the single mean") {
    train::TrainConfig cfg;
    cfg.k = 1;
    cfg.hidden_dim = 3;
    cfg.gamma = 0.2;
    train::ModelParams mp = model_with(cfg, 2, 5, 0.4);
    mp.basis.means.value.data = {1.25, -0.5};
    data::MtsSample prefix = full_sample(2, 6, 7);
    ForecastResult fr = forecast(mp, prefix, 4);
    for (int t = 0; t < 4; ++t) {
        CHECK(fr.predictions.at(0, t) == doctest::Approx(1.25));
        CHECK(fr.predictions.at(1, t) == doctest::Approx(-0.5));
        CHECK(fr.psi_path.at(t, 0) == doctest::Approx(1.0));
    }
}

TEST_CASE("forecast with gamma=1 predicts the constant basis mean") {
    train::TrainConfig cfg;
    cfg.k = 2;
    cfg.hidden_dim = 3;
    cfg.gamma = 1.0;
    train::ModelParams mp = model_with(cfg, 1, 11, 0.5);
    mp.basis.means.value.data = {2.0, -4.0};
    mp.basis.basis_probs = {0.3, 0.7};
    data::MtsSample prefix = full_sample(1, 5, 13);
    ForecastResult fr = forecast(mp, prefix, 3);
    double expect = 0.3 * 2.0 + 0.7 * (-4.0);
    for (int t = 0; t < 3; ++t) CHECK(fr.predictions.at(0, t) == doctest::Approx(expect));
}

TEST_CASE("forecast through the alternator matches the closed-form rollout") {
    train::TrainConfig cfg;
    cfg.k = 2;
    cfg.hidden_dim = 2;
    cfg.gamma = 0.0;
    train::ModelParams mp = train::ModelParams::init(cfg, 2);
    // Generative transition: deterministic two-state alternator (saturated
    // update gate makes the cell memoryless).
    for (auto* p : mp.gen.parameters())
        for (double& v : p->value.data) v = 0.0;
    mp.gen.cell.w[5].value.data = {30.0, 30.0};
    mp.gen.cell.w[6].value.data = {10.0, -10.0, -10.0, 10.0};
    mp.gen.head.w[0].value.data = {5.0, 0.0, 0.0, 5.0};
    mp.gen.head.w[2].value.data = {-10.0, 10.0, 10.0, -10.0};
    mp.basis.means.value.data = {-2.0, 1.0, 2.0, -1.0};
    mp.basis.basis_probs = {0.5, 0.5};
    // Inference head pinned to cluster 0 regardless of input.
    for (auto* p : mp.inf.parameters())
        for (double& v : p->value.data) v = 0.0;
    mp.inf.head.w[3].value.data = {40.0, 0.0};  // b2

    data::MtsSample prefix = full_sample(2, 5, 17);
    const int r = 6;
    ForecastResult fr = forecast(mp, prefix, r);

    // Closed form: the chain starts at state 0 and alternates exactly.
    for (int t = 0; t < r; ++t) {
        int state = (t % 2 == 0) ? 1 : 0;  // first rollout step leaves state 0
        for (int j = 0; j < 2; ++j)
            CHECK(std::abs(fr.predictions.at(j, t) -
                           mp.basis.means.value.data[state * 2 + j]) < 1e-9);
    }
}

TEST_CASE("forecast never reads horizon values") {
    train::TrainConfig cfg;
    cfg.k = 2;
    cfg.hidden_dim = 3;
    train::ModelParams mp = model_with(cfg, 2, 19, 0.4);
    data::MtsSample s = full_sample(2, 8, 23);
    const int w = 5, r = 3;
    ForecastResult a = forecast(mp, s.prefix(w), r);
    data::MtsSample mutated = s;
    for (int i = 0; i < 2; ++i)
        for (int t = w; t < 8; ++t) mutated.values.at(i, t) = 1e9;
    ForecastResult b = forecast(mp, mutated.prefix(w), r);
    CHECK(a.predictions.a == b.predictions.a);
}

TEST_CASE("score arithmetic") {
    Mat truth(1, 2);
    truth.at(0, 0) = 3.0;
    truth.at(0, 1) = 2.0;
    MaskMat mask(1, 2, 1);
    Mat perfect = truth;
    MetricReport r0 = score(perfect, truth, mask);
    CHECK(r0.rmse == doctest::Approx(0.0));
    CHECK(r0.mae == doctest::Approx(0.0));

    Mat plus1 = truth;
    for (double& v : plus1.a) v += 1.0;
    MetricReport r1 = score(plus1, truth, mask);
    CHECK(r1.rmse == doctest::Approx(1.0));
    CHECK(r1.mae == doctest::Approx(1.0));

    Mat preds(1, 2);
    preds.at(0, 0) = 1.0;
    preds.at(0, 1) = 2.0;
    MetricReport r2 = score(preds, truth, mask);
    CHECK(r2.rmse == doctest::Approx(std::sqrt(2.0)));
    CHECK(r2.mae == doctest::Approx(1.0));
    CHECK(r2.n_scored == 2);
}

TEST_CASE("score: empty mask is an error; rmse >= mae always") {
    Mat x(2, 2, 1.0);
    MaskMat none(2, 2, 0);
    CHECK_THROWS_AS(score(x, x, none), UndefinedMetricsError);

    rng::Engine eng(29);
    for (int rep = 0; rep < 100; ++rep) {
        int d = 1 + eng.uniform_int(3), w = 1 + eng.uniform_int(5);
        Mat pred(d, w), truth(d, w);
        MaskMat m(d, w, 0);
        bool any = false;
        for (int i = 0; i < d; ++i)
            for (int t = 0; t < w; ++t) {
                pred.at(i, t) = eng.normal();
                truth.at(i, t) = eng.normal();
                if (eng.uniform01() < 0.7) {
                    m.at(i, t) = 1;
                    any = true;
                }
            }
        if (!any) continue;
        MetricReport rep1 = score(pred, truth, m);
        CHECK(rep1.rmse >= rep1.mae);
        CHECK(rep1.mae >= 0.0);
        // scale equivariance
        Mat pred2 = pred, truth2 = truth;
        for (double& v : pred2.a) v *= 3.0;
        for (double& v : truth2.a) v *= 3.0;
        MetricReport rep3 = score(pred2, truth2, m);
        CHECK(rep3.rmse == doctest::Approx(3.0 * rep1.rmse));
        CHECK(rep3.mae == doctest::Approx(3.0 * rep1.mae));
    }
}

TEST_CASE("score is permutation invariant over entries") {
    Mat pred(1, 4), truth(1, 4);
    MaskMat m(1, 4, 1);
    for (int t = 0; t < 4; ++t) {
        pred.at(0, t) = t * 0.5;
        truth.at(0, t) = 2.0 - t;
    }
    MetricReport a = score(pred, truth, m);
    // permute columns
    Mat pred2(1, 4), truth2(1, 4);
    int perm[4] = {2, 0, 3, 1};
    for (int t = 0; t < 4; ++t) {
        pred2.at(0, t) = pred.at(0, perm[t]);
        truth2.at(0, t) = truth.at(0, perm[t]);
    }
    MetricReport b = score(pred2, truth2, m);
    CHECK(a.rmse == doctest::Approx(b.rmse));
    CHECK(a.mae == doctest::Approx(b.mae));
}

TEST_CASE("baselines: mean, locf and the zero fallback") {
    data::MtsSample prefix;
    prefix.id = "b";
    prefix.values = Mat(3, 4, missing_value());
    prefix.mask = MaskMat(3, 4, 0);
    prefix.ref_times = {1, 2, 3, 4};
    // var 0: observed {2, 4}
    prefix.values.at(0, 0) = 2.0;
    prefix.mask.at(0, 0) = 1;
    prefix.values.at(0, 2) = 4.0;
    prefix.mask.at(0, 2) = 1;
    // var 1: last observation 7
    prefix.values.at(1, 1) = 1.0;
    prefix.mask.at(1, 1) = 1;
    prefix.values.at(1, 3) = 7.0;
    prefix.mask.at(1, 3) = 1;
    // var 2: never observed
    BaselinePredictions bp = baselines(prefix, 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(bp.mean.at(0, t) == doctest::Approx(3.0));
        CHECK(bp.locf.at(1, t) == doctest::Approx(7.0));
        CHECK(bp.mean.at(2, t) == doctest::Approx(0.0));
        CHECK(bp.locf.at(2, t) == doctest::Approx(0.0));
    }
}

TEST_CASE("imputation_eval: degenerate single-cluster model gives equal errors") {
    // Constant series, d=1, k=1, mean pinned to the constant: both routes
    // impute the constant exactly.
    train::TrainConfig cfg;
    cfg.k = 1;
    cfg.hidden_dim = 3;
    train::ModelParams mp = model_with(cfg, 1, 31, 0.3);
    const double c = 1.75;
    mp.basis.means.value.data = {c};
    std::vector<data::MtsSample> samples;
    for (int i = 0; i < 4; ++i) {
        data::MtsSample s = full_sample(1, 10, 100 + i);
        for (double& v : s.values.a) v = c;
        samples.push_back(s);
    }
    auto [before, after] = imputation_eval(mp, samples, 0.2, 7);
    CHECK(before == doctest::Approx(after));
    CHECK(before == doctest::Approx(0.0));
}

TEST_CASE("imputation_eval rejects out-of-range hold-out fractions") {
    train::TrainConfig cfg;
    cfg.k = 1;
    cfg.hidden_dim = 2;
    train::ModelParams mp = model_with(cfg, 1, 37, 0.3);
    std::vector<data::MtsSample> samples = {full_sample(1, 6, 41)};
    CHECK_THROWS_AS(imputation_eval(mp, samples, 0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(imputation_eval(mp, samples, 1.0, 1), InvalidArgument);
}

TEST_CASE("robustness sweep: shape and delta-zero equivalence") {
    auto [samples, gt] = data::synthesize(2, 1, 8, 14, 25.0, 0.05, 432);
    data::SplitSpec spec;
    spec.seed = 5;
    data::Splits splits = data::split(samples, spec);

    train::TrainConfig cfg;
    cfg.k = 2;
    cfg.hidden_dim = 3;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.window = 6;
    cfg.horizon = 2;
    cfg.lr = 5e-3;

    data::ForecastTask task{6, 2};
    std::vector<double> deltas = {0.0, 0.4};
    std::vector<uint64_t> seeds = {3};
    auto rows = robustness_sweep(cfg, splits, 1, task, deltas, seeds);

    size_t model_rows = 0, baseline_rows = 0;
    for (const auto& r : rows)
        (r.model == "dynmix" ? model_rows : baseline_rows)++;
    CHECK(model_rows == deltas.size() * seeds.size());
    CHECK(baseline_rows == 2 * seeds.size());

    // delta = 0 equals a direct uncorrupted run with the same seed.
    train::TrainConfig direct = cfg;
    direct.seed = 3;
    train::TrainResult res = train::fit(splits.train, splits.valid, direct, 1);
    SplitEvaluation ev = evaluate_split(res.params, splits.test, task);
    bool found = false;
    for (const auto& r : rows)
        if (r.model == "dynmix" && r.delta == 0.0) {
            CHECK(r.rmse == doctest::Approx(ev.model.rmse).epsilon(1e-12));
            found = true;
        }
    CHECK(found);
}

TEST_CASE("metrics csv header is exact") {
    std::vector<SweepRow> rows = {{"dynmix", 0.2, 7, 1.5, 1.0, 42}};
    std::string path = (std::filesystem::temp_directory_path() / "dm_metrics.csv").string();
    write_metrics_csv(path, rows, "synth");
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "dataset,model,delta,seed,rmse,mae,n_scored");
    CHECK(line.substr(0, 13) == "synth,dynmix,");
}
