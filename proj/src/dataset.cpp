#include "dynmix/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dynmix/rng.hpp"

namespace dynmix::data {

void MtsSample::validate() const {
    require(values.rows == mask.rows && values.cols == mask.cols,
            "sample " + id + ": values/mask shape mismatch");
    require(values.cols >= 2, "sample " + id + ": needs w >= 2");
    require(values.rows >= 1, "sample " + id + ": needs d >= 1");
    require(static_cast<int>(ref_times.size()) == values.cols,
            "sample " + id + ": ref_times length mismatch");
    for (size_t t = 1; t < ref_times.size(); ++t)
        require(ref_times[t] > ref_times[t - 1], "sample " + id + ": ref_times not increasing");
    for (int i = 0; i < values.rows; ++i)
        for (int t = 0; t < values.cols; ++t)
            if (mask.at(i, t)) {
                require(std::isfinite(values.at(i, t)),
                        "sample " + id + ": non-finite observed value");
            }
}

MtsSample MtsSample::prefix(int steps) const {
    require(steps >= 1 && steps <= w(), "prefix: steps out of range");
    MtsSample out;
    out.id = id;
    out.values = Mat(d(), steps);
    out.mask = MaskMat(d(), steps);
    out.ref_times.assign(ref_times.begin(), ref_times.begin() + steps);
    for (int i = 0; i < d(); ++i)
        for (int t = 0; t < steps; ++t) {
            out.values.at(i, t) = values.at(i, t);
            out.mask.at(i, t) = mask.at(i, t);
        }
    return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, size_t line_no, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError(line_no, std::string("bad ") + what + " value '" + s + "'");
    return v;
}

long parse_long(const std::string& s, size_t line_no, const char* what) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError(line_no, std::string("bad ") + what + " value '" + s + "'");
    return v;
}

struct LongRow {
    std::string id;
    double time;
    int var;
    double value;
};

std::vector<MtsSample> assemble_samples(std::vector<LongRow>& rows, int d) {
    // Preserve first-appearance order of sample ids.
    std::vector<std::string> order;
    std::map<std::string, std::vector<size_t>> by_id;
    for (size_t r = 0; r < rows.size(); ++r) {
        auto [it, inserted] = by_id.try_emplace(rows[r].id);
        if (inserted) order.push_back(rows[r].id);
        it->second.push_back(r);
    }
    std::vector<MtsSample> out;
    out.reserve(order.size());
    for (const std::string& id : order) {
        std::set<double> times;
        for (size_t r : by_id[id]) times.insert(rows[r].time);
        MtsSample s;
        s.id = id;
        s.ref_times.assign(times.begin(), times.end());
        int w = static_cast<int>(s.ref_times.size());
        s.values = Mat(d, w, missing_value());
        s.mask = MaskMat(d, w, 0);
        std::map<double, int> tidx;
        for (int t = 0; t < w; ++t) tidx[s.ref_times[t]] = t;
        for (size_t r : by_id[id]) {
            int t = tidx[rows[r].time];
            s.values.at(rows[r].var, t) = rows[r].value;
            s.mask.at(rows[r].var, t) = 1;
        }
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

std::vector<MtsSample> load_long_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw EmptyDatasetError("empty file: " + path);
    ++line_no;
    {
        auto fields = split_fields(line);
        if (fields != std::vector<std::string>{"sample_id", "time", "variable", "value"})
            throw ParseError(line_no, "expected header sample_id,time,variable,value");
    }
    std::vector<LongRow> rows;
    std::set<std::tuple<std::string, double, int>> seen;
    int max_var = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_fields(line);
        if (fields.size() != 4) throw ParseError(line_no, "expected 4 fields");
        LongRow r;
        r.id = fields[0];
        r.time = parse_double(fields[1], line_no, "time");
        long var = parse_long(fields[2], line_no, "variable");
        if (var < 0) throw ParseError(line_no, "negative variable index");
        r.var = static_cast<int>(var);
        r.value = parse_double(fields[3], line_no, "value");
        if (!std::isfinite(r.value)) throw ParseError(line_no, "non-finite value");
        if (!seen.insert({r.id, r.time, r.var}).second)
            throw ConflictError("duplicate key (" + r.id + "," + fields[1] + "," + fields[2] +
                                ") at line " + std::to_string(line_no));
        max_var = std::max(max_var, r.var);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw EmptyDatasetError("no data rows in " + path);
    return assemble_samples(rows, max_var + 1);
}

std::vector<MtsSample> load_wide_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw EmptyDatasetError("empty file: " + path);
    ++line_no;
    auto header = split_fields(line);
    if (header.size() < 3 || header[0] != "sample_id" || header[1] != "time")
        throw ParseError(line_no, "expected header sample_id,time,v0,...");
    int d = static_cast<int>(header.size()) - 2;
    std::vector<LongRow> rows;
    std::set<std::tuple<std::string, double, int>> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_fields(line);
        if (fields.size() != header.size()) throw ParseError(line_no, "field count mismatch");
        double time = parse_double(fields[1], line_no, "time");
        for (int v = 0; v < d; ++v) {
            const std::string& cell = fields[2 + v];
            if (cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA") continue;
            LongRow r;
            r.id = fields[0];
            r.time = time;
            r.var = v;
            r.value = parse_double(cell, line_no, "value");
            if (!std::isfinite(r.value)) throw ParseError(line_no, "non-finite value");
            if (!seen.insert({r.id, r.time, r.var}).second)
                throw ConflictError("duplicate key at line " + std::to_string(line_no));
            rows.push_back(std::move(r));
        }
    }
    if (rows.empty()) throw EmptyDatasetError("no data rows in " + path);
    return assemble_samples(rows, d);
}

void write_long_csv(const std::string& path, const std::vector<MtsSample>& samples) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out << "sample_id,time,variable,value\n";
    char buf[64];
    for (const MtsSample& s : samples) {
        for (int t = 0; t < s.w(); ++t)
            for (int i = 0; i < s.d(); ++i) {
                if (!s.mask.at(i, t)) continue;
                out << s.id << ',';
                std::snprintf(buf, sizeof buf, "%.17g", s.ref_times[t]);
                out << buf << ',' << i << ',';
                std::snprintf(buf, sizeof buf, "%.17g", s.values.at(i, t));
                out << buf << '\n';
            }
    }
    if (!out) throw Error("write failed: " + path);
}

MtsSample corrupt(const MtsSample& sample, double delta, uint64_t seed) {
    require(delta >= 0.0 && delta <= 1.0, "corrupt: delta must be in [0,1]");
    MtsSample out = sample;
    std::vector<std::pair<int, int>> observed;
    for (int i = 0; i < sample.d(); ++i)
        for (int t = 0; t < sample.w(); ++t)
            if (sample.mask.at(i, t)) observed.emplace_back(i, t);
    size_t n_drop = static_cast<size_t>(std::llround(delta * static_cast<double>(observed.size())));
    if (n_drop == 0) return out;
    rng::Engine eng(seed);
    rng::shuffle(observed, eng);
    for (size_t j = 0; j < n_drop; ++j) {
        auto [i, t] = observed[j];
        out.mask.at(i, t) = 0;
        out.values.at(i, t) = missing_value();
    }
    return out;
}

Splits split(const std::vector<MtsSample>& samples, const SplitSpec& spec) {
    require(!samples.empty(), "split: empty sample list");
    require(spec.train_frac >= 0 && spec.valid_frac >= 0 && spec.test_frac >= 0,
            "split: negative fraction");
    require(std::abs(spec.train_frac + spec.valid_frac + spec.test_frac - 1.0) < 1e-9,
            "split: fractions must sum to 1");
    size_t n = samples.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    rng::Engine eng(spec.seed);
    rng::shuffle(idx, eng);
    size_t n_train = static_cast<size_t>(std::floor(spec.train_frac * static_cast<double>(n)));
    size_t n_valid = static_cast<size_t>(std::floor(spec.valid_frac * static_cast<double>(n)));
    size_t n_test = static_cast<size_t>(std::floor(spec.test_frac * static_cast<double>(n)));
    n_train += n - (n_train + n_valid + n_test);  // remainder to train
    Splits out;
    size_t pos = 0;
    for (size_t j = 0; j < n_train; ++j) out.train.push_back(samples[idx[pos++]]);
    for (size_t j = 0; j < n_valid; ++j) out.valid.push_back(samples[idx[pos++]]);
    for (size_t j = 0; j < n_test; ++j) out.test.push_back(samples[idx[pos++]]);
    return out;
}

NormStats NormStats::compute(const std::vector<MtsSample>& train_samples, int d) {
    NormStats st;
    st.mean.assign(d, 0.0);
    st.std.assign(d, 1.0);
    std::vector<size_t> count(d, 0);
    for (const MtsSample& s : train_samples)
        for (int i = 0; i < s.d(); ++i)
            for (int t = 0; t < s.w(); ++t)
                if (s.mask.at(i, t)) {
                    st.mean[i] += s.values.at(i, t);
                    ++count[i];
                }
    for (int i = 0; i < d; ++i)
        if (count[i] > 0) st.mean[i] /= static_cast<double>(count[i]);
    std::vector<double> ss(d, 0.0);
    for (const MtsSample& s : train_samples)
        for (int i = 0; i < s.d(); ++i)
            for (int t = 0; t < s.w(); ++t)
                if (s.mask.at(i, t)) {
                    double c = s.values.at(i, t) - st.mean[i];
                    ss[i] += c * c;
                }
    for (int i = 0; i < d; ++i) {
        double sd = count[i] > 0 ? std::sqrt(ss[i] / static_cast<double>(count[i])) : 0.0;
        st.std[i] = sd > 0.0 ? sd : 1.0;
    }
    return st;
}

std::vector<MtsSample> normalize(const std::vector<MtsSample>& samples, const NormStats& stats) {
    std::vector<MtsSample> out = samples;
    for (MtsSample& s : out)
        for (int i = 0; i < s.d(); ++i)
            for (int t = 0; t < s.w(); ++t)
                if (s.mask.at(i, t))
                    s.values.at(i, t) = (s.values.at(i, t) - stats.mean[i]) / stats.std[i];
    return out;
}

std::vector<MtsSample> align_to_grid(const std::vector<MtsSample>& samples) {
    std::set<double> grid;
    for (const MtsSample& s : samples)
        for (double t : s.ref_times) grid.insert(t);
    std::vector<double> times(grid.begin(), grid.end());
    std::map<double, int> index;
    for (size_t i = 0; i < times.size(); ++i) index[times[i]] = static_cast<int>(i);
    int w = static_cast<int>(times.size());
    std::vector<MtsSample> out;
    out.reserve(samples.size());
    for (const MtsSample& s : samples) {
        MtsSample g;
        g.id = s.id;
        g.ref_times = times;
        g.values = Mat(s.d(), w, missing_value());
        g.mask = MaskMat(s.d(), w, 0);
        for (int i = 0; i < s.d(); ++i)
            for (int t = 0; t < s.w(); ++t)
                if (s.mask.at(i, t)) {
                    int col = index[s.ref_times[t]];
                    g.values.at(i, col) = s.values.at(i, t);
                    g.mask.at(i, col) = 1;
                }
        out.push_back(std::move(g));
    }
    return out;
}

std::string GroundTruth::to_json() const {
    nlohmann::json j;
    auto mat_to_json = [](const Mat& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < m.rows; ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    j["means"] = mat_to_json(means);
    j["transition"] = mat_to_json(transition);
    j["basis_probs"] = basis_probs;
    j["paths"] = paths;
    j["emission_paths"] = emission_paths;
    return j.dump(2);
}

namespace {

Mat default_means(int k, int d) {
    // Well-separated deterministic layout: k points on a radius-4 circle in
    // the first two dimensions (a segment for d = 1), zero elsewhere. The
    // circle is rotated off the axes so every single dimension separates all
    // components.
    Mat mu(k, d, 0.0);
    const double radius = 4.0;
    const double tilt = k > 0 ? 1.0471975511965976 / k : 0.0;  // pi / (3k)
    for (int i = 0; i < k; ++i) {
        if (d == 1) {
            mu.at(i, 0) = k == 1 ? 0.0 : -radius + 2.0 * radius * i / (k - 1);
        } else {
            double angle = 6.283185307179586 * i / k + tilt;
            mu.at(i, 0) = radius * std::cos(angle);
            mu.at(i, 1) = radius * std::sin(angle);
        }
    }
    return mu;
}

Mat default_transition(int k) {
    // Fast cycle: advance with 0.95, stay with 0.05. The latent path is
    // predictable several steps out while the per-sample mean carries almost
    // no signal, so dynamics-aware forecasts have room over naive anchors.
    Mat T(k, k, 0.0);
    if (k == 1) {
        T.at(0, 0) = 1.0;
        return T;
    }
    for (int i = 0; i < k; ++i) {
        T.at(i, i) = 0.05;
        T.at(i, (i + 1) % k) = 0.95;
    }
    return T;
}

}  // namespace

std::pair<std::vector<MtsSample>, GroundTruth> synthesize(int k, int d, int w, int n,
                                                          double sigma, double gamma,
                                                          uint64_t seed,
                                                          const SynthOptions& opts) {
    require(k >= 1 && d >= 1 && w >= 1 && n >= 1, "synthesize: k,d,w,n must be >= 1");
    require(sigma > 0.0, "synthesize: sigma must be positive");
    require(gamma >= 0.0 && gamma <= 1.0, "synthesize: gamma must be in [0,1]");

    GroundTruth gt;
    gt.means = opts.means ? *opts.means : default_means(k, d);
    gt.transition = opts.transition ? *opts.transition : default_transition(k);
    gt.basis_probs.assign(k, 1.0 / k);
    require(gt.means.rows == k && gt.means.cols == d, "synthesize: means shape");
    require(gt.transition.rows == k && gt.transition.cols == k, "synthesize: transition shape");

    double noise_std = 1.0 / std::sqrt(sigma);
    std::vector<MtsSample> samples;
    samples.reserve(n);
    rng::Engine eng(rng::derive_seed(seed, "synthesize"));

    std::vector<double> z1_prior(k, 1.0 / k);
    if (opts.fixed_z1) {
        z1_prior.assign(k, 0.0);
        z1_prior[*opts.fixed_z1] = 1.0;
    }

    for (int s = 0; s < n; ++s) {
        MtsSample ms;
        ms.id = "s" + std::to_string(s);
        ms.values = Mat(d, w);
        ms.mask = MaskMat(d, w, 1);
        ms.ref_times.resize(w);
        for (int t = 0; t < w; ++t) ms.ref_times[t] = t + 1;

        std::vector<int> zpath(w), epath(w);
        int z = eng.categorical(z1_prior);
        for (int t = 0; t < w; ++t) {
            if (t > 0) {
                std::vector<double> trow(k);
                for (int j = 0; j < k; ++j) trow[j] = gt.transition.at(z, j);
                z = eng.categorical(trow);
            }
            zpath[t] = z;
            // psi_t mixes the step's transition distribution with the basis.
            std::vector<double> psi(k);
            for (int j = 0; j < k; ++j) {
                double dyn = t == 0 ? z1_prior[j] : gt.transition.at(zpath[t - 1], j);
                psi[j] = (1.0 - gamma) * dyn + gamma * gt.basis_probs[j];
            }
            int ze = eng.categorical(psi);
            epath[t] = ze;
            for (int i = 0; i < d; ++i)
                ms.values.at(i, t) = gt.means.at(ze, i) + noise_std * eng.normal();
        }
        gt.paths.push_back(std::move(zpath));
        gt.emission_paths.push_back(std::move(epath));
        samples.push_back(std::move(ms));
    }
    return {std::move(samples), std::move(gt)};
}

}  // namespace dynmix::data
