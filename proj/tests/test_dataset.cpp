#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dynmix/dataset.hpp"
#include "dynmix/rng.hpp"

using namespace dynmix;
using namespace dynmix::data;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path, std::ios::trunc);
    out << content;
    return path;
}

MtsSample make_sample(int d, int w, double fill = 1.0) {
    MtsSample s;
    s.id = "s";
    s.values = Mat(d, w, fill);
    s.mask = MaskMat(d, w, 1);
    s.ref_times.resize(w);
    for (int t = 0; t < w; ++t) s.ref_times[t] = t + 1;
    return s;
}

}  // namespace

TEST_CASE("long csv: dense two-step sample") {
    auto path = write_temp("dm_load1.csv",
                           "sample_id,time,variable,value\ns1,1,0,2.0\ns1,2,0,3.0\n");
    auto samples = load_long_csv(path);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].d() == 1);
    CHECK(samples[0].w() == 2);
    CHECK(samples[0].mask.at(0, 0) == 1);
    CHECK(samples[0].mask.at(0, 1) == 1);
    CHECK(samples[0].values.at(0, 0) == 2.0);
    CHECK(samples[0].values.at(0, 1) == 3.0);
}

TEST_CASE("long csv: absent cells are masked") {
    auto path = write_temp("dm_load2.csv",
                           "sample_id,time,variable,value\ns1,1,0,2.0\ns1,2,1,5.0\n");
    auto samples = load_long_csv(path);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].d() == 2);
    CHECK(samples[0].w() == 2);
    CHECK(samples[0].mask.at(0, 0) == 1);
    CHECK(samples[0].mask.at(0, 1) == 0);
    CHECK(samples[0].mask.at(1, 0) == 0);
    CHECK(samples[0].mask.at(1, 1) == 1);
}

TEST_CASE("long csv: malformed value names the line") {
    auto path = write_temp("dm_load3.csv",
                           "sample_id,time,variable,value\ns1,1,0,2.0\ns1,2,0,abc\n");
    try {
        load_long_csv(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_no == 3);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("long csv: duplicate key and empty file errors") {
    auto dup = write_temp("dm_load4.csv",
                          "sample_id,time,variable,value\ns1,1,0,2.0\ns1,1,0,2.5\n");
    CHECK_THROWS_AS(load_long_csv(dup), ConflictError);
    auto empty = write_temp("dm_load5.csv", "");
    CHECK_THROWS_AS(load_long_csv(empty), EmptyDatasetError);
    auto headeronly = write_temp("dm_load6.csv", "sample_id,time,variable,value\n");
    CHECK_THROWS_AS(load_long_csv(headeronly), EmptyDatasetError);
}

TEST_CASE("long csv round-trip reproduces the observed set") {
    rng::Engine eng(3);
    auto [samples, gt] = synthesize(3, 2, 8, 5, 4.0, 0.2, 77);
    std::vector<MtsSample> corrupted;
    for (size_t i = 0; i < samples.size(); ++i)
        corrupted.push_back(corrupt(samples[i], 0.3, 1000 + i));
    auto path = write_temp("dm_rt.csv", "");
    write_long_csv(path, corrupted);
    auto loaded = load_long_csv(path);
    REQUIRE(loaded.size() == corrupted.size());
    auto key_set = [](const std::vector<MtsSample>& ss) {
        std::set<std::tuple<std::string, double, int, double>> keys;
        for (const auto& s : ss)
            for (int i = 0; i < s.d(); ++i)
                for (int t = 0; t < s.w(); ++t)
                    if (s.mask.at(i, t))
                        keys.insert({s.id, s.ref_times[t], i, s.values.at(i, t)});
        return keys;
    };
    CHECK(key_set(loaded) == key_set(corrupted));
}

TEST_CASE("wide csv loader accepts NaN cells") {
    auto path = write_temp("dm_wide.csv",
                           "sample_id,time,v0,v1\ns1,1,2.0,\ns1,2,nan,5.0\ns1,3,1.5,2.5\n");
    auto samples = load_wide_csv(path);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].d() == 2);
    CHECK(samples[0].w() == 3);
    CHECK(samples[0].mask.at(0, 0) == 1);
    CHECK(samples[0].mask.at(1, 0) == 0);
    CHECK(samples[0].mask.at(0, 1) == 0);
    CHECK(samples[0].mask.at(1, 1) == 1);
}

TEST_CASE("corrupt: delta 0 is the identity") {
    MtsSample s = make_sample(2, 5, 3.0);
    MtsSample c = corrupt(s, 0.0, 42);
    CHECK(c.values.a == s.values.a);
    CHECK(c.mask.a == s.mask.a);
}

TEST_CASE("corrupt: delta 1 drops everything") {
    MtsSample s = make_sample(2, 5, 3.0);
    MtsSample c = corrupt(s, 1.0, 42);
    CHECK(c.mask.count() == 0);
}

TEST_CASE("corrupt: exact count and determinism") {
    MtsSample s = make_sample(2, 5, 3.0);  // 10 observed
    MtsSample c1 = corrupt(s, 0.6, 7);
    MtsSample c2 = corrupt(s, 0.6, 7);
    CHECK(c1.mask.count() == 4);  // exactly 6 newly masked
    CHECK(c1.mask.a == c2.mask.a);
    MtsSample c3 = corrupt(s, 0.6, 8);
    CHECK(c3.mask.count() == 4);
}

TEST_CASE("corrupt never flips masks on or edits surviving values") {
    rng::Engine eng(9);
    auto [samples, gt] = synthesize(2, 3, 10, 8, 1.0, 0.1, 5);
    for (size_t i = 0; i < samples.size(); ++i) {
        MtsSample partial = corrupt(samples[i], 0.4, 100 + i);
        MtsSample more = corrupt(partial, 0.5, 200 + i);
        for (int v = 0; v < partial.d(); ++v)
            for (int t = 0; t < partial.w(); ++t) {
                if (!partial.mask.at(v, t)) CHECK(more.mask.at(v, t) == 0);
                if (more.mask.at(v, t)) {
                    CHECK(partial.mask.at(v, t) == 1);
                    CHECK(more.values.at(v, t) == partial.values.at(v, t));
                }
            }
    }
}

TEST_CASE("split: floor allocation with remainder to train") {
    std::vector<MtsSample> ten;
    for (int i = 0; i < 10; ++i) {
        MtsSample s = make_sample(1, 3);
        s.id = "s" + std::to_string(i);
        ten.push_back(s);
    }
    SplitSpec spec;
    spec.seed = 4;
    Splits sp = split(ten, spec);
    CHECK(sp.train.size() == 7);
    CHECK(sp.valid.size() == 1);
    CHECK(sp.test.size() == 2);

    std::vector<MtsSample> one = {make_sample(1, 3)};
    Splits sp1 = split(one, spec);
    CHECK(sp1.train.size() == 1);
    CHECK(sp1.valid.size() == 0);
    CHECK(sp1.test.size() == 0);
}

TEST_CASE("split: deterministic, disjoint and exhaustive") {
    std::vector<MtsSample> samples;
    for (int i = 0; i < 23; ++i) {
        MtsSample s = make_sample(1, 3);
        s.id = "s" + std::to_string(i);
        samples.push_back(s);
    }
    SplitSpec spec;
    spec.seed = 11;
    Splits a = split(samples, spec);
    Splits b = split(samples, spec);
    auto ids = [](const std::vector<MtsSample>& v) {
        std::vector<std::string> out;
        for (const auto& s : v) out.push_back(s.id);
        return out;
    };
    CHECK(ids(a.train) == ids(b.train));
    CHECK(ids(a.valid) == ids(b.valid));
    CHECK(ids(a.test) == ids(b.test));
    std::set<std::string> all;
    for (const auto& s : a.train) all.insert(s.id);
    for (const auto& s : a.valid) all.insert(s.id);
    for (const auto& s : a.test) all.insert(s.id);
    CHECK(all.size() == 23);
}

TEST_CASE("normalize: arithmetic, zero-std guard, mask respected") {
    MtsSample s = make_sample(2, 3);
    // variable 0: values 3,5,7 -> mean 5, population std sqrt(8/3)... use
    // prescribed stats directly instead of computing.
    NormStats st;
    st.mean = {5.0, 2.0};
    st.std = {2.0, 1.0};
    s.values.at(0, 0) = 9.0;
    s.mask.at(0, 1) = 0;
    s.values.at(0, 1) = missing_value();
    auto out = normalize({s}, st);
    CHECK(out[0].values.at(0, 0) == doctest::Approx(2.0));
    CHECK(std::isnan(out[0].values.at(0, 1)));

    // computed stats: constant variable gets std 1
    MtsSample c = make_sample(1, 4, 5.0);
    NormStats cst = NormStats::compute({c}, 1);
    CHECK(cst.mean[0] == doctest::Approx(5.0));
    CHECK(cst.std[0] == doctest::Approx(1.0));
    auto outc = normalize({c}, cst);
    CHECK(outc[0].values.at(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("synthesize: single component empirical mean") {
    const int n = 200, w = 10, d = 2;
    const double sigma = 4.0;
    auto [samples, gt] = synthesize(1, d, w, n, sigma, 0.0, 13);
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (const auto& s : samples)
            for (int t = 0; t < w; ++t) acc += s.values.at(i, t);
        double mean = acc / (n * w);
        double bound = 3.0 / std::sqrt(sigma) / std::sqrt(double(n) * w);
        CHECK(std::abs(mean - gt.means.at(0, i)) < bound * 3.0);
    }
}

TEST_CASE("synthesize: vanishing noise pins draws to a mean") {
    auto [samples, gt] = synthesize(2, 2, 6, 20, 1e6, 0.3, 21);
    for (const auto& s : samples)
        for (int t = 0; t < s.w(); ++t) {
            double best = 1e18;
            for (int z = 0; z < 2; ++z) {
                double dist = 0.0;
                for (int i = 0; i < 2; ++i)
                    dist = std::max(dist, std::abs(s.values.at(i, t) - gt.means.at(z, i)));
                best = std::min(best, dist);
            }
            CHECK(best < 0.01);
        }
}

TEST_CASE("synthesize: absorbing transition with fixed start stays in one cluster") {
    SynthOptions opts;
    opts.fixed_z1 = 1;
    Mat T(2, 2, 0.0);
    T.at(0, 0) = 1.0;
    T.at(1, 1) = 1.0;
    opts.transition = T;
    auto [samples, gt] = synthesize(2, 2, 8, 10, 1e6, 0.0, 31, opts);
    for (const auto& path : gt.paths)
        for (int z : path) CHECK(z == 1);
    for (const auto& path : gt.emission_paths)
        for (int z : path) CHECK(z == 1);
    for (const auto& s : samples)
        for (int t = 0; t < s.w(); ++t)
            for (int i = 0; i < 2; ++i)
                CHECK(std::abs(s.values.at(i, t) - gt.means.at(1, i)) < 0.01);
}

TEST_CASE("synthesize: bit-reproducible and uniform z1") {
    auto [s1, g1] = synthesize(4, 2, 5, 100, 1.0, 0.5, 99);
    auto [s2, g2] = synthesize(4, 2, 5, 100, 1.0, 0.5, 99);
    REQUIRE(s1.size() == s2.size());
    for (size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].values.a == s2[i].values.a);
    CHECK(g1.paths == g2.paths);

    // chi-square uniformity of z1 at n=10000: crit(0.99, df=3) = 11.345
    auto [big, gbig] = synthesize(4, 1, 2, 10000, 1.0, 0.5, 123);
    std::vector<int> counts(4, 0);
    for (const auto& p : gbig.paths) counts[p[0]]++;
    double expct = 10000.0 / 4.0;
    double stat = 0.0;
    for (int c : counts) stat += (c - expct) * (c - expct) / expct;
    CHECK(stat < 11.345);
}

TEST_CASE("synthesize rejects non-positive sigma") {
    CHECK_THROWS_AS(synthesize(2, 2, 5, 3, 0.0, 0.1, 1), InvalidArgument);
}

TEST_CASE("ground truth exports json with required fields") {
    auto [samples, gt] = synthesize(2, 2, 4, 3, 1.0, 0.1, 8);
    std::string json = gt.to_json();
    for (const char* field : {"\"means\"", "\"transition\"", "\"basis_probs\"", "\"paths\""})
        CHECK(json.find(field) != std::string::npos);
}
