#pragma once

#include <algorithm>
#include <complex>
#include <optional>
#include <sstream>
#include <vector>

#include "restflow/common.hpp"
#include "restflow/fft.hpp"
#include "restflow/io.hpp"
#include "restflow/linalg.hpp"

// Evaluation suite for generated vs real series: MAE, Welch PSD discrepancy,
// FC similarity, top-5% edge recovery and conditional FID over FC features.

namespace restflow::metrics {

constexpr double kPsdFloor = 1e-12;

// ---------------------------------------------------------------------------
// Basic metrics
// ---------------------------------------------------------------------------

inline double mae(const Matrix& x, const Matrix& y) {
    if (!x.same_shape(y)) throw ShapeError("mae: " + shape_str(x) + " vs " + shape_str(y));
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x.data[i] - y.data[i]);
    return acc / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Welch power spectral density: Hann window, overlapping segments, one-sided,
// normalized by window power and sampling rate. Each segment has its mean
// removed before windowing so constant offsets cannot leak into nonzero bins.
// ---------------------------------------------------------------------------

struct WelchSpectrum {
    std::vector<double> freqs;  // Hz
    std::vector<double> power;
};

inline WelchSpectrum welch_psd(const std::vector<double>& x, double tr, std::size_t seg_len,
                               double overlap = 0.5) {
    if (seg_len < 8) throw ValidationError("welch_psd: seg_len must be >= 8");
    if (seg_len > x.size())
        throw ValidationError("welch_psd: seg_len " + std::to_string(seg_len) + " exceeds T " +
                              std::to_string(x.size()));
    if (overlap < 0.0 || overlap >= 1.0) throw ValidationError("welch_psd: overlap in [0,1)");
    if (tr <= 0.0) throw ValidationError("welch_psd: tr must be positive");

    const double fs = 1.0 / tr;
    const std::size_t hop =
        std::max<std::size_t>(1, seg_len - static_cast<std::size_t>(overlap * static_cast<double>(seg_len)));
    const std::size_t n_seg = (x.size() - seg_len) / hop + 1;
    const std::size_t n_bins = seg_len / 2 + 1;

    std::vector<double> window(seg_len);
    double win_power = 0.0;
    for (std::size_t i = 0; i < seg_len; ++i) {
        window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) /
                                          static_cast<double>(seg_len - 1)));
        win_power += window[i] * window[i];
    }

    WelchSpectrum out;
    out.freqs.resize(n_bins);
    out.power.assign(n_bins, 0.0);
    for (std::size_t k = 0; k < n_bins; ++k)
        out.freqs[k] = static_cast<double>(k) * fs / static_cast<double>(seg_len);

    std::vector<std::complex<double>> seg(seg_len);
    for (std::size_t s = 0; s < n_seg; ++s) {
        double seg_mean = 0.0;
        for (std::size_t i = 0; i < seg_len; ++i) seg_mean += x[s * hop + i];
        seg_mean /= static_cast<double>(seg_len);
        for (std::size_t i = 0; i < seg_len; ++i)
            seg[i] = {(x[s * hop + i] - seg_mean) * window[i], 0.0};
        fft(seg, false);
        for (std::size_t k = 0; k < n_bins; ++k) {
            double p = std::norm(seg[k]) / (fs * win_power);
            if (k != 0 && !(seg_len % 2 == 0 && k == n_bins - 1)) p *= 2.0;  // one-sided
            out.power[k] += p;
        }
    }
    for (double& p : out.power) p /= static_cast<double>(n_seg);
    return out;
}

inline std::vector<double> column(const Matrix& m, std::size_t j) {
    std::vector<double> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) out[i] = m(i, j);
    return out;
}

// Mean absolute log-PSD difference over the in-band Welch bins, averaged over
// ROIs. Power is floored before the log.
inline double psd_discrepancy(const Matrix& gen, const Matrix& real, double tr, Band band,
                              std::size_t seg_len = 0) {
    if (!gen.same_shape(real))
        throw ShapeError("psd_discrepancy: " + shape_str(gen) + " vs " + shape_str(real));
    if (!(band.lo > 0.0) || !(band.lo < band.hi) || !(band.hi < 0.5 / tr))
        throw ConfigError("psd_discrepancy: need 0 < band_lo < band_hi < Nyquist");
    if (seg_len == 0) seg_len = std::min<std::size_t>(64, gen.rows);

    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < gen.cols; ++v) {
        WelchSpectrum pg = welch_psd(column(gen, v), tr, seg_len);
        WelchSpectrum pr = welch_psd(column(real, v), tr, seg_len);
        for (std::size_t k = 0; k < pg.freqs.size(); ++k) {
            if (pg.freqs[k] < band.lo || pg.freqs[k] > band.hi) continue;
            acc += std::abs(std::log(std::max(pg.power[k], kPsdFloor)) -
                            std::log(std::max(pr.power[k], kPsdFloor)));
            ++count;
        }
    }
    if (count == 0)
        throw ConfigError("psd_discrepancy: no Welch bins inside band [" +
                          std::to_string(band.lo) + ", " + std::to_string(band.hi) + "] Hz");
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Functional connectivity
// ---------------------------------------------------------------------------

// Pearson correlation matrix over time. Zero-variance ROIs correlate 0 with
// everything (diagonal stays 1).
inline Matrix fc_matrix(const Matrix& x) {
    if (x.rows < 3) throw ValidationError("fc_matrix: need T >= 3, got " + shape_str(x));
    const std::size_t t = x.rows, v = x.cols;

    std::vector<double> mean(v, 0.0), sd(v, 0.0);
    for (std::size_t j = 0; j < v; ++j) {
        for (std::size_t i = 0; i < t; ++i) mean[j] += x(i, j);
        mean[j] /= static_cast<double>(t);
        for (std::size_t i = 0; i < t; ++i) {
            double d = x(i, j) - mean[j];
            sd[j] += d * d;
        }
        sd[j] = std::sqrt(sd[j]);
    }

    Matrix r(v, v);
    for (std::size_t i = 0; i < v; ++i) r(i, i) = 1.0;
    for (std::size_t i = 0; i < v; ++i) {
        for (std::size_t j = i + 1; j < v; ++j) {
            double corr = 0.0;
            if (sd[i] > 0.0 && sd[j] > 0.0) {
                double cov = 0.0;
                for (std::size_t k = 0; k < t; ++k)
                    cov += (x(k, i) - mean[i]) * (x(k, j) - mean[j]);
                corr = cov / (sd[i] * sd[j]);
                corr = std::clamp(corr, -1.0, 1.0);
            }
            r(i, j) = corr;
            r(j, i) = corr;
        }
    }
    return r;
}

// Upper-triangle (i<j) vectorization, the FC feature used for cFID.
inline std::vector<double> fc_upper(const Matrix& fc) {
    if (fc.rows != fc.cols) throw ShapeError("fc_upper: matrix not square " + shape_str(fc));
    std::vector<double> out;
    out.reserve(fc.rows * (fc.rows - 1) / 2);
    for (std::size_t i = 0; i < fc.rows; ++i)
        for (std::size_t j = i + 1; j < fc.cols; ++j) out.push_back(fc(i, j));
    return out;
}

// Pearson correlation between two FC feature vectors; nullopt when either
// vector is constant (similarity undefined).
inline std::optional<double> fc_similarity(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw ShapeError("fc_similarity: " + shape_str(a) + " vs " + shape_str(b));
    std::vector<double> fa = fc_upper(a), fb = fc_upper(b);
    const std::size_t n = fa.size();
    if (n < 2) throw ValidationError("fc_similarity: need V >= 3");

    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += fa[i];
        mb += fb[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        saa += (fa[i] - ma) * (fa[i] - ma);
        sbb += (fb[i] - mb) * (fb[i] - mb);
        sab += (fa[i] - ma) * (fb[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Fraction of the top-5%-|R| edges of A recovered among the top edges of B.
// Ties at the cut are broken by (i, j) lexicographic order.
inline double p_at_top5(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("p_at_top5: " + shape_str(a) + " vs " + shape_str(b));
    const std::size_t v = a.rows;
    if (v < 7)
        throw ValidationError("p_at_top5: need V >= 7 so that 5% of edges is at least one edge");

    struct Edge {
        double mag;
        std::size_t i, j;
    };
    auto top_set = [v](const Matrix& m, std::size_t k) {
        std::vector<Edge> edges;
        edges.reserve(v * (v - 1) / 2);
        for (std::size_t i = 0; i < v; ++i)
            for (std::size_t j = i + 1; j < v; ++j) edges.push_back({std::abs(m(i, j)), i, j});
        std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
            if (x.mag != y.mag) return x.mag > y.mag;
            if (x.i != y.i) return x.i < y.i;
            return x.j < y.j;
        });
        std::vector<std::size_t> keys;
        keys.reserve(k);
        for (std::size_t e = 0; e < k; ++e) keys.push_back(edges[e].i * v + edges[e].j);
        std::sort(keys.begin(), keys.end());
        return keys;
    };

    const std::size_t n_edges = v * (v - 1) / 2;
    const std::size_t k = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n_edges)));
    std::vector<std::size_t> sa = top_set(a, k), sb = top_set(b, k);
    std::vector<std::size_t> inter;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    return static_cast<double>(inter.size()) / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// cFID: Frechet distance between Gaussians fitted to FC feature populations.
// ---------------------------------------------------------------------------

namespace detail {

struct Moments {
    std::vector<double> mean;
    Matrix cov;  // sample covariance (n-1), regularized by +1e-6 I
};

inline Moments fit_moments(const std::vector<std::vector<double>>& feats) {
    const std::size_t n = feats.size(), d = feats[0].size();
    Moments m;
    m.mean.assign(d, 0.0);
    for (const auto& f : feats)
        for (std::size_t j = 0; j < d; ++j) m.mean[j] += f[j];
    for (std::size_t j = 0; j < d; ++j) m.mean[j] /= static_cast<double>(n);

    m.cov = Matrix(d, d);
    for (const auto& f : feats) {
        for (std::size_t i = 0; i < d; ++i) {
            double di = f[i] - m.mean[i];
            for (std::size_t j = i; j < d; ++j) m.cov(i, j) += di * (f[j] - m.mean[j]);
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            m.cov(i, j) /= static_cast<double>(n - 1);
            m.cov(j, i) = m.cov(i, j);
        }
    for (std::size_t i = 0; i < d; ++i) m.cov(i, i) += 1e-6;
    return m;
}

// Symmetric square root via eigendecomposition, negative eigenvalues clamped.
inline Matrix sym_sqrt(const Matrix& a) {
    SymEig eig = jacobi_eigensym(a);
    const std::size_t n = a.rows;
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        double lam = std::sqrt(std::max(eig.values[k], 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out(i, j) += lam * eig.vectors(i, k) * eig.vectors(j, k);
    }
    return out;
}

inline Matrix matmul_plain(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            double av = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += av * b(k, j);
        }
    return c;
}

}  // namespace detail

inline double cfid(const std::vector<std::vector<double>>& real,
                   const std::vector<std::vector<double>>& gen) {
    if (real.size() < 2 || gen.size() < 2)
        throw ValidationError("cfid: need at least 2 samples per population");
    const std::size_t d = real[0].size();
    for (const auto& f : real)
        if (f.size() != d) throw ShapeError("cfid: inconsistent feature dims in real set");
    for (const auto& f : gen)
        if (f.size() != d) throw ShapeError("cfid: feature dim mismatch between populations");

    detail::Moments mr = detail::fit_moments(real);
    detail::Moments mg = detail::fit_moments(gen);

    double mean_term = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double diff = mr.mean[j] - mg.mean[j];
        mean_term += diff * diff;
    }

    // Tr((Sr Sg)^{1/2}) computed from the symmetric product Sr^{1/2} Sg Sr^{1/2}
    Matrix sr_half = detail::sym_sqrt(mr.cov);
    Matrix inner = detail::matmul_plain(detail::matmul_plain(sr_half, mg.cov), sr_half);
    for (std::size_t i = 0; i < d; ++i)  // re-symmetrize against roundoff
        for (std::size_t j = i + 1; j < d; ++j) {
            double s = 0.5 * (inner(i, j) + inner(j, i));
            inner(i, j) = s;
            inner(j, i) = s;
        }
    SymEig eig = jacobi_eigensym(inner);
    double tr_sqrt = 0.0;
    for (double lam : eig.values) tr_sqrt += std::sqrt(std::max(lam, 0.0));

    double tr_r = 0.0, tr_g = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        tr_r += mr.cov(i, i);
        tr_g += mg.cov(i, i);
    }
    return mean_term + tr_r + tr_g - 2.0 * tr_sqrt;
}

// ---------------------------------------------------------------------------
// Aggregate evaluation over paired subjects
// ---------------------------------------------------------------------------

struct MetricReport {
    double mae = 0.0;
    double psd_disc = 0.0;
    double fc_sim = 0.0;
    double p_at_5 = 0.0;
    std::optional<double> cfid;
    std::size_t n_subjects = 0;
    std::vector<std::string> warnings;
};

struct EvalPair {
    std::string subject;
    io::TimeSeries real;
    io::TimeSeries gen;
};

inline MetricReport evaluate(const std::vector<EvalPair>& pairs, Band band) {
    if (pairs.empty()) throw ValidationError("evaluate: no subject pairs");

    MetricReport rep;
    rep.n_subjects = pairs.size();
    std::vector<std::vector<double>> feats_real, feats_gen;
    double fc_sum = 0.0;
    std::size_t fc_n = 0;

    for (const auto& p : pairs) {
        if (!p.real.data.same_shape(p.gen.data))
            throw ShapeError("evaluate: subject " + p.subject + " shape mismatch " +
                             shape_str(p.real.data) + " vs " + shape_str(p.gen.data));
        rep.mae += mae(p.gen.data, p.real.data);
        rep.psd_disc += psd_discrepancy(p.gen.data, p.real.data, p.real.tr, band);
        Matrix fr = fc_matrix(p.real.data);
        Matrix fg = fc_matrix(p.gen.data);
        if (auto sim = fc_similarity(fr, fg)) {
            fc_sum += *sim;
            ++fc_n;
        } else {
            rep.warnings.push_back("subject " + p.subject + ": fc_similarity undefined (constant FC)");
        }
        rep.p_at_5 += p_at_top5(fr, fg);
        feats_real.push_back(fc_upper(fr));
        feats_gen.push_back(fc_upper(fg));
    }

    const double n = static_cast<double>(pairs.size());
    rep.mae /= n;
    rep.psd_disc /= n;
    rep.p_at_5 /= n;
    if (fc_n == 0) throw ValidationError("evaluate: fc_similarity undefined for every subject");
    rep.fc_sim = fc_sum / static_cast<double>(fc_n);

    if (pairs.size() >= 2) {
        rep.cfid = cfid(feats_real, feats_gen);
    } else {
        rep.warnings.push_back("cfid skipped: need at least 2 subjects, got 1");
    }
    return rep;
}

inline std::string report_csv_header() { return "task,n,mae,psd,fc_sim,p_at_5,cfid"; }

inline std::string report_csv_row(const std::string& task, const MetricReport& rep) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << task << "," << rep.n_subjects << "," << rep.mae << "," << rep.psd_disc << ","
       << rep.fc_sim << "," << rep.p_at_5 << ",";
    if (rep.cfid)
        os << *rep.cfid;
    else
        os << "nan";
    return os.str();
}

}  // namespace restflow::metrics
