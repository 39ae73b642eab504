#include "roda/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "roda/error.hpp"
#include "roda/parallel.hpp"
#include "roda/rng.hpp"

namespace roda::alignment {

namespace fs_ = std::filesystem;
using feature_store::FeatureSet;
using feature_store::Sample;
using memory_bank::MemoryBank;
using nlohmann::json;
using transport::CostMatrix;
using transport::DiscreteAssignment;
using transport::TransportPlan;

Matrix apply_adapter(const AffineAdapter& adapter, const Matrix& patches) {
    if (patches.cols != adapter.dim())
        throw data_error("adapter dim " + std::to_string(adapter.dim()) +
                         " does not match patch dim " + std::to_string(patches.cols));
    Matrix out(patches.rows, patches.cols);
    for (size_t i = 0; i < patches.rows; ++i) adapter.apply_row(patches.row(i), out.row(i));
    return out;
}

AugmentPolicy augment_policy_from_string(const std::string& s) {
    if (s == "none") return AugmentPolicy::None;
    if (s == "copy") return AugmentPolicy::Copy;
    if (s == "jitter") return AugmentPolicy::Jitter;
    throw config_error("unknown augmentation policy: " + s);
}

std::string to_string(AugmentPolicy p) {
    switch (p) {
        case AugmentPolicy::None: return "none";
        case AugmentPolicy::Copy: return "copy";
        default: return "jitter";
    }
}

Method method_from_string(const std::string& s) {
    if (s == "robust-ot") return Method::RobustOt;
    if (s == "continuous-ot") return Method::ContinuousOt;
    if (s == "hungarian") return Method::Hungarian;
    if (s == "moment-match") return Method::MomentMatch;
    if (s == "gaussian-kl") return Method::GaussianKl;
    throw config_error("unknown adaptation method: " + s);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::RobustOt: return "robust-ot";
        case Method::ContinuousOt: return "continuous-ot";
        case Method::Hungarian: return "hungarian";
        case Method::MomentMatch: return "moment-match";
        default: return "gaussian-kl";
    }
}

void validate(const AdaptConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
        throw config_error("adapt.learning_rate must be a finite value >= 0");
    if (cfg.epochs < 1) throw config_error("adapt.epochs must be >= 1");
    if (cfg.batch_size < 1) throw config_error("adapt.batch_size must be >= 1");
    if (!(cfg.epsilon > 0.0) || !std::isfinite(cfg.epsilon))
        throw config_error("adapt.epsilon must be a finite value > 0");
    if (cfg.views < 1) throw config_error("adapt.views must be >= 1");
    if (!(cfg.sigma_aug >= 0.0) || !std::isfinite(cfg.sigma_aug))
        throw config_error("adapt.sigma_aug must be a finite value >= 0");
    if (cfg.policy == AugmentPolicy::Copy) {
        if (cfg.views < 2) throw config_error("adapt.views must be >= 2 under policy copy");
        if (cfg.sigma_aug != 0.0)
            throw config_error("adapt.sigma_aug must be 0 under policy copy");
    }
    if (cfg.sinkhorn_max_iter < 1) throw config_error("adapt.sinkhorn_max_iter must be >= 1");
    if (!(cfg.sinkhorn_tol > 0.0)) throw config_error("adapt.sinkhorn_tol must be > 0");
    if (cfg.restarts < 1) throw config_error("adapt.restarts must be >= 1");
    if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay))
        throw config_error("adapt.weight_decay must be a finite value >= 0");
}

FeatureSet augment_batch(const FeatureSet& batch, AugmentPolicy policy, int views,
                         double sigma_aug, uint64_t seed) {
    if (policy == AugmentPolicy::None) return batch;

    const size_t per_sample = static_cast<size_t>(batch.patches_per_sample());
    const size_t dim = static_cast<size_t>(batch.dim);

    FeatureSet out;
    out.dim = batch.dim;
    out.grid_h = batch.grid_h;
    out.grid_w = batch.grid_w;
    out.domain_tag = batch.domain_tag;
    out.samples.reserve(batch.samples.size() * static_cast<size_t>(views));

    // Channel stds of the pre-augmentation batch (population), so the noise
    // amplitude tracks the batch rather than a global constant.
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    if (policy == AugmentPolicy::Jitter) {
        size_t count = 0;
        for (const Sample& s : batch.samples) {
            for (size_t p = 0; p < per_sample; ++p)
                for (size_t c = 0; c < dim; ++c)
                    mean[c] += static_cast<double>(s.grid[p * dim + c]);
            count += per_sample;
        }
        if (count > 0)
            for (size_t c = 0; c < dim; ++c) mean[c] /= static_cast<double>(count);
        for (const Sample& s : batch.samples)
            for (size_t p = 0; p < per_sample; ++p)
                for (size_t c = 0; c < dim; ++c) {
                    double d = static_cast<double>(s.grid[p * dim + c]) - mean[c];
                    var[c] += d * d;
                }
        if (count > 0)
            for (size_t c = 0; c < dim; ++c) var[c] /= static_cast<double>(count);
    }
    std::vector<double> bstd(dim, 0.0);
    for (size_t c = 0; c < dim; ++c) bstd[c] = std::sqrt(var[c]);

    // View 0 is the original sample itself; views 1..V-1 are synthetic and
    // carry no patch labels, so diagnostics that count pairs on
    // labeled-anomalous rows see only genuine data rows.
    for (const Sample& s : batch.samples) {
        out.samples.push_back(s);
        for (int v = 1; v < views; ++v) {
            Sample view = s;
            view.sample_id = s.sample_id + "#v" + std::to_string(v);
            view.patch_labels.reset();
            if (policy == AugmentPolicy::Jitter && sigma_aug > 0.0) {
                Rng noise(mix_key(seed, fnv1a64(s.sample_id), static_cast<uint64_t>(v)));
                for (size_t p = 0; p < per_sample; ++p)
                    for (size_t c = 0; c < dim; ++c) {
                        double x = static_cast<double>(view.grid[p * dim + c]);
                        x += sigma_aug * bstd[c] * noise.normal();
                        view.grid[p * dim + c] = static_cast<float>(x);
                    }
            }
            out.samples.push_back(std::move(view));
        }
    }
    return out;
}

RobustLossResult robust_sinkhorn_loss(const AffineAdapter& adapter, const Matrix& batch_patches,
                                      const MemoryBank& bank, const EntropicParams& params) {
    RobustLossResult res;
    res.cost = transport::cost_matrix(batch_patches, bank, &adapter);
    double eps = params.epsilon_rel * transport::mean_cost(res.cost);
    if (!(eps > 0.0)) eps = params.epsilon_rel;  // all-zero costs: any coupling is optimal
    res.plan = transport::sinkhorn(res.cost, eps, params.max_iter, params.tol);
    res.pairs = transport::discretize(res.plan);
    res.loss = transport::assignment_cost(res.pairs, res.cost);
    return res;
}

std::pair<std::vector<double>, std::vector<double>> loss_gradient(
    const AffineAdapter& adapter, const Matrix& batch_patches, const MemoryBank& bank,
    const DiscreteAssignment& pairs) {
    const size_t dim = adapter.dim();
    if (batch_patches.cols != dim || bank.dim() != dim)
        throw data_error("dimension mismatch between adapter, batch, and bank");
    std::vector<double> gs(dim, 0.0), gt(dim, 0.0);
    std::vector<double> v(dim);
    for (const auto& [i, j] : pairs.pairs) {
        if (i >= batch_patches.rows || j >= bank.size())
            throw data_error("assignment pair out of range");
        const double* z = batch_patches.row(i);
        const double* m = bank.prototypes.row(j);
        double nv = 0.0;
        for (size_t c = 0; c < dim; ++c) {
            v[c] = adapter.scale[c] * z[c] + adapter.shift[c] - m[c];
            nv += v[c] * v[c];
        }
        nv = std::sqrt(nv);
        if (nv < 1e-12) continue;  // distance has no usable direction at the cusp
        for (size_t c = 0; c < dim; ++c) {
            double u = v[c] / nv;
            gt[c] += u;
            gs[c] += u * z[c];
        }
    }
    return {std::move(gs), std::move(gt)};
}

LossGrad continuous_plan_gradient(const AffineAdapter& adapter, const Matrix& batch_patches,
                                  const MemoryBank& bank, const TransportPlan& plan) {
    const size_t n = batch_patches.rows;
    const size_t m = bank.size();
    const size_t dim = adapter.dim();
    if (plan.gamma.rows != n || plan.gamma.cols != m)
        throw data_error("transport plan shape does not match batch and bank");
    if (batch_patches.cols != dim || bank.dim() != dim)
        throw data_error("dimension mismatch between adapter, batch, and bank");

    constexpr size_t kChunk = 16;
    const size_t nchunks = n == 0 ? 0 : (n + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> ps(nchunks), pt(nchunks);
    std::vector<double> pl(nchunks, 0.0);
    parallel_chunks(n, kChunk, [&](size_t b, size_t e) {
        size_t ci = b / kChunk;
        std::vector<double> gs(dim, 0.0), gt(dim, 0.0), v(dim);
        double loss = 0.0;
        for (size_t i = b; i < e; ++i) {
            const double* z = batch_patches.row(i);
            const double* g = plan.gamma.row(i);
            for (size_t j = 0; j < m; ++j) {
                double w = g[j];
                if (w == 0.0) continue;
                const double* mj = bank.prototypes.row(j);
                double nv = 0.0;
                for (size_t c = 0; c < dim; ++c) {
                    v[c] = adapter.scale[c] * z[c] + adapter.shift[c] - mj[c];
                    nv += v[c] * v[c];
                }
                nv = std::sqrt(nv);
                loss += w * nv;
                if (nv < 1e-12) continue;
                double wn = w / nv;
                for (size_t c = 0; c < dim; ++c) {
                    gt[c] += wn * v[c];
                    gs[c] += wn * v[c] * z[c];
                }
            }
        }
        ps[ci] = std::move(gs);
        pt[ci] = std::move(gt);
        pl[ci] = loss;
    });

    LossGrad out;
    out.grad_scale.assign(dim, 0.0);
    out.grad_shift.assign(dim, 0.0);
    for (size_t ci = 0; ci < nchunks; ++ci) {
        out.loss += pl[ci];
        for (size_t c = 0; c < dim; ++c) {
            out.grad_scale[c] += ps[ci][c];
            out.grad_shift[c] += pt[ci][c];
        }
    }
    return out;
}

namespace {

// Population mean and covariance of the rows of a matrix.
void mean_cov(const Matrix& x, std::vector<double>& mu, Matrix& cov) {
    const size_t n = x.rows;
    const size_t d = x.cols;
    mu.assign(d, 0.0);
    cov = Matrix(d, d, 0.0);
    if (n == 0) return;
    for (size_t i = 0; i < n; ++i) {
        const double* r = x.row(i);
        for (size_t c = 0; c < d; ++c) mu[c] += r[c];
    }
    for (size_t c = 0; c < d; ++c) mu[c] /= static_cast<double>(n);
    std::vector<double> dif(d);
    for (size_t i = 0; i < n; ++i) {
        const double* r = x.row(i);
        for (size_t c = 0; c < d; ++c) dif[c] = r[c] - mu[c];
        for (size_t a = 0; a < d; ++a)
            for (size_t b = 0; b < d; ++b) cov.at(a, b) += dif[a] * dif[b];
    }
    for (double& v : cov.data) v /= static_cast<double>(n);
}

// Lower-triangular Cholesky; false if the matrix is not positive definite.
bool cholesky(const Matrix& a, Matrix& l) {
    const size_t d = a.rows;
    l = Matrix(d, d, 0.0);
    for (size_t i = 0; i < d; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (!(s > 0.0)) return false;
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return true;
}

// Solves A x = b via the Cholesky factor (forward then back substitution).
void chol_solve(const Matrix& l, const double* b, double* x) {
    const size_t d = l.rows;
    std::vector<double> y(d);
    for (size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (size_t k = 0; k < i; ++k) s -= l.at(i, k) * y[k];
        y[i] = s / l.at(i, i);
    }
    for (size_t i = d; i-- > 0;) {
        double s = y[i];
        for (size_t k = i + 1; k < d; ++k) s -= l.at(k, i) * x[k];
        x[i] = s / l.at(i, i);
    }
}

Matrix chol_inverse(const Matrix& l) {
    const size_t d = l.rows;
    Matrix inv(d, d, 0.0);
    std::vector<double> e(d, 0.0), col(d);
    for (size_t j = 0; j < d; ++j) {
        e[j] = 1.0;
        chol_solve(l, e.data(), col.data());
        e[j] = 0.0;
        for (size_t i = 0; i < d; ++i) inv.at(i, j) = col[i];
    }
    return inv;
}

double chol_logdet(const Matrix& l) {
    double s = 0.0;
    for (size_t i = 0; i < l.rows; ++i) s += std::log(l.at(i, i));
    return 2.0 * s;
}

struct BatchStats {
    std::vector<double> mu_z;  // raw batch mean
    Matrix cov_z;              // raw batch covariance (population)
    std::vector<double> mu_t;  // adapted mean: scale * mu_z + shift
    Matrix cov_t;              // adapted covariance: S cov_z S
};

BatchStats adapted_stats(const AffineAdapter& adapter, const Matrix& batch) {
    if (batch.cols != adapter.dim())
        throw data_error("adapter dim does not match batch patch dim");
    if (batch.rows == 0) throw data_error("empty batch in statistical loss");
    BatchStats st;
    mean_cov(batch, st.mu_z, st.cov_z);
    const size_t d = batch.cols;
    st.mu_t.resize(d);
    st.cov_t = Matrix(d, d, 0.0);
    for (size_t c = 0; c < d; ++c)
        st.mu_t[c] = adapter.scale[c] * st.mu_z[c] + adapter.shift[c];
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b)
            st.cov_t.at(a, b) = adapter.scale[a] * adapter.scale[b] * st.cov_z.at(a, b);
    return st;
}

constexpr double kCovRidge = 1e-4;  // times the mean diagonal entry

}  // namespace

LossGrad moment_matching_loss(const AffineAdapter& adapter, const Matrix& batch_patches,
                              const MemoryBank& bank) {
    if (bank.dim() != adapter.dim())
        throw data_error("adapter dim does not match bank dim");
    BatchStats st = adapted_stats(adapter, batch_patches);
    std::vector<double> mu_s;
    Matrix cov_s;
    mean_cov(bank.prototypes, mu_s, cov_s);

    const size_t d = adapter.dim();
    LossGrad out;
    out.grad_scale.assign(d, 0.0);
    out.grad_shift.assign(d, 0.0);
    std::vector<double> dmu(d);
    for (size_t c = 0; c < d; ++c) {
        dmu[c] = st.mu_t[c] - mu_s[c];
        out.loss += dmu[c] * dmu[c];
        out.grad_shift[c] = 2.0 * dmu[c];
        out.grad_scale[c] = 2.0 * dmu[c] * st.mu_z[c];
    }
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b) {
            double ds = st.cov_t.at(a, b) - cov_s.at(a, b);
            out.loss += ds * ds;
        }
    // d/ds_c of ||S Cz S - Cs||_F^2 = 4 sum_j (cov_t - cov_s)_{cj} cov_z_{cj} s_j
    for (size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double ds = st.cov_t.at(c, j) - cov_s.at(c, j);
            acc += ds * st.cov_z.at(c, j) * adapter.scale[j];
        }
        out.grad_scale[c] += 4.0 * acc;
    }
    return out;
}

LossGrad gaussian_kl_loss(const AffineAdapter& adapter, const Matrix& batch_patches,
                          const MemoryBank& bank) {
    if (bank.dim() != adapter.dim())
        throw data_error("adapter dim does not match bank dim");
    BatchStats st = adapted_stats(adapter, batch_patches);
    std::vector<double> mu_s;
    Matrix cov_s;
    mean_cov(bank.prototypes, mu_s, cov_s);

    const size_t d = adapter.dim();
    const double dd = static_cast<double>(d);

    double tr_t = 0.0, tr_s = 0.0;
    for (size_t c = 0; c < d; ++c) {
        tr_t += st.cov_t.at(c, c);
        tr_s += cov_s.at(c, c);
    }
    const double lam_t = kCovRidge * tr_t / dd;
    const double lam_s = kCovRidge * tr_s / dd;

    Matrix sig_t = st.cov_t, sig_s = cov_s;
    for (size_t c = 0; c < d; ++c) {
        sig_t.at(c, c) += lam_t;
        sig_s.at(c, c) += lam_s;
    }

    Matrix lt, ls;
    if (!cholesky(sig_s, ls) || !cholesky(sig_t, lt))
        throw numeric_error("covariance matrix is not positive definite in gaussian-kl");

    Matrix inv_s = chol_inverse(ls);
    Matrix inv_t = chol_inverse(lt);

    std::vector<double> dmu(d), u(d);
    for (size_t c = 0; c < d; ++c) dmu[c] = st.mu_t[c] - mu_s[c];
    chol_solve(ls, dmu.data(), u.data());  // u = sig_s^{-1} dmu

    double trace_term = 0.0;
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b) trace_term += inv_s.at(a, b) * sig_t.at(b, a);
    double maha = 0.0;
    for (size_t c = 0; c < d; ++c) maha += dmu[c] * u[c];

    LossGrad out;
    out.loss = 0.5 * (trace_term + maha - dd + chol_logdet(ls) - chol_logdet(lt));
    out.grad_scale.assign(d, 0.0);
    out.grad_shift.assign(d, 0.0);

    // G = dKL/dSigma_t = 0.5 (sig_s^{-1} - sig_t^{-1})
    Matrix g(d, d, 0.0);
    double tr_g = 0.0;
    for (size_t a = 0; a < d; ++a) {
        for (size_t b = 0; b < d; ++b) g.at(a, b) = 0.5 * (inv_s.at(a, b) - inv_t.at(a, b));
        tr_g += g.at(a, a);
    }
    for (size_t c = 0; c < d; ++c) {
        out.grad_shift[c] = u[c];
        double acc = 0.0;
        for (size_t a = 0; a < d; ++a)
            acc += g.at(c, a) * adapter.scale[a] * st.cov_z.at(a, c);
        // chain through Sigma_t = S Cz S + ridge(S) I
        out.grad_scale[c] = u[c] * st.mu_z[c] + 2.0 * acc +
                            2.0 * tr_g * kCovRidge / dd * adapter.scale[c] * st.cov_z.at(c, c);
    }
    return out;
}

namespace {

constexpr uint64_t kOrderTag = 0xA1;    // minibatch shuffle stream
constexpr uint64_t kJitterTag = 0xA2;   // augmentation noise stream
constexpr uint64_t kRestartTag = 0xA3;  // per-restart trajectory stream

double vec_sq(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

std::pair<AffineAdapter, AdaptTrace> adapt(const MemoryBank& bank, const FeatureSet& train,
                                           const AdaptConfig& cfg, Method method) {
    validate(cfg);
    if (train.samples.empty()) throw data_error("adaptation training set is empty");
    if (bank.size() == 0) throw data_error("memory bank is empty");
    if (static_cast<size_t>(train.dim) != bank.dim())
        throw data_error("bank dim " + std::to_string(bank.dim()) +
                         " does not match feature set dim " + std::to_string(train.dim));

    const size_t dim = bank.dim();
    const size_t per_sample = static_cast<size_t>(train.patches_per_sample());
    const uint32_t n = static_cast<uint32_t>(train.samples.size());
    const uint32_t bs = static_cast<uint32_t>(cfg.batch_size);

    bool labels_available = true;
    for (const Sample& s : train.samples)
        if (!s.patch_labels) { labels_available = false; break; }

    AdaptTrace trace;
    const EntropicParams ot_params{cfg.epsilon, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol};
    const int tail_start = cfg.epochs - (cfg.epochs + 1) / 2;
    std::vector<double> mean_scale(dim, 0.0), mean_shift(dim, 0.0);
    int step = 0;

    for (int rs = 0; rs < cfg.restarts; ++rs) {
    const uint64_t traj_seed = mix_key(cfg.seed, kRestartTag, static_cast<uint64_t>(rs));
    AffineAdapter adapter(dim);
    Rng order(mix_key(traj_seed, kOrderTag));

    std::vector<double> acc_scale(dim, 0.0), acc_shift(dim, 0.0);
    int acc_count = 0;

    for (int ep = 0; ep < cfg.epochs; ++ep) {
        std::vector<uint32_t> perm = order.permutation(n);
        const uint64_t jitter_seed = mix_key(traj_seed, kJitterTag, static_cast<uint64_t>(ep));

        for (uint32_t start = 0; start < n; start += bs) {
            const uint32_t stop = std::min(n, start + bs);

            FeatureSet batch;
            batch.dim = train.dim;
            batch.grid_h = train.grid_h;
            batch.grid_w = train.grid_w;
            batch.domain_tag = train.domain_tag;
            batch.samples.reserve(stop - start);
            for (uint32_t k = start; k < stop; ++k)
                batch.samples.push_back(train.samples[perm[k]]);

            FeatureSet aug = augment_batch(batch, cfg.policy, cfg.views, cfg.sigma_aug,
                                           jitter_seed);
            Matrix z = feature_store::patch_matrix(aug);

            std::vector<uint8_t> row_anom;
            if (labels_available) {
                row_anom.reserve(z.rows);
                for (const Sample& s : aug.samples)
                    for (size_t p = 0; p < per_sample; ++p)
                        row_anom.push_back(s.patch_labels ? (*s.patch_labels)[p]
                                                         : uint8_t{0});
            }

            StepRecord rec;
            rec.step = step;
            std::vector<double> gs, gt;
            double step_div = 1.0;  // pair count for the assignment losses, else 1

            switch (method) {
                case Method::RobustOt: {
                    RobustLossResult res = robust_sinkhorn_loss(adapter, z, bank, ot_params);
                    rec.loss = res.loss;
                    rec.residual = res.plan.marginal_residual;
                    rec.pairs = static_cast<int>(res.pairs.pairs.size());
                    auto grads = loss_gradient(adapter, z, bank, res.pairs);
                    gs = std::move(grads.first);
                    gt = std::move(grads.second);
                    step_div = std::max<double>(1.0, static_cast<double>(rec.pairs));
                    if (labels_available) {
                        rec.anomalous_pairs = 0;
                        for (const auto& pr : res.pairs.pairs)
                            if (row_anom[pr.first]) ++rec.anomalous_pairs;
                    }
                    break;
                }
                case Method::Hungarian: {
                    CostMatrix c = transport::cost_matrix(z, bank, &adapter);
                    transport::HungarianResult h = transport::hungarian_assignment(c);
                    DiscreteAssignment da{h.pairs};
                    rec.loss = h.total_cost;
                    rec.pairs = static_cast<int>(da.pairs.size());
                    auto grads = loss_gradient(adapter, z, bank, da);
                    gs = std::move(grads.first);
                    gt = std::move(grads.second);
                    step_div = std::max<double>(1.0, static_cast<double>(rec.pairs));
                    if (labels_available) {
                        rec.anomalous_pairs = 0;
                        for (const auto& pr : da.pairs)
                            if (row_anom[pr.first]) ++rec.anomalous_pairs;
                    }
                    break;
                }
                case Method::ContinuousOt: {
                    CostMatrix c = transport::cost_matrix(z, bank, &adapter);
                    double eps = cfg.epsilon * transport::mean_cost(c);
                    if (!(eps > 0.0)) eps = cfg.epsilon;
                    TransportPlan plan =
                        transport::sinkhorn(c, eps, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol);
                    LossGrad lg = continuous_plan_gradient(adapter, z, bank, plan);
                    rec.loss = lg.loss;
                    rec.residual = plan.marginal_residual;
                    if (labels_available) rec.anomalous_pairs = 0;
                    gs = std::move(lg.grad_scale);
                    gt = std::move(lg.grad_shift);
                    break;
                }
                case Method::MomentMatch: {
                    LossGrad lg = moment_matching_loss(adapter, z, bank);
                    rec.loss = lg.loss;
                    if (labels_available) rec.anomalous_pairs = 0;
                    gs = std::move(lg.grad_scale);
                    gt = std::move(lg.grad_shift);
                    break;
                }
                case Method::GaussianKl: {
                    LossGrad lg = gaussian_kl_loss(adapter, z, bank);
                    rec.loss = lg.loss;
                    if (labels_available) rec.anomalous_pairs = 0;
                    gs = std::move(lg.grad_scale);
                    gt = std::move(lg.grad_shift);
                    break;
                }
            }

            rec.grad_norm = std::sqrt(vec_sq(gs) + vec_sq(gt));
            if (!std::isfinite(rec.loss) || !all_finite(gs) || !all_finite(gt))
                throw numeric_error("non-finite loss or gradient at adaptation step " +
                                    std::to_string(step));

            for (size_t c = 0; c < dim; ++c) {
                adapter.scale[c] -= cfg.learning_rate *
                    (gs[c] / step_div + cfg.weight_decay * (adapter.scale[c] - 1.0));
                adapter.shift[c] -= cfg.learning_rate *
                    (gt[c] / step_div + cfg.weight_decay * adapter.shift[c]);
            }
            trace.steps.push_back(rec);
            ++step;
        }

        if (cfg.tail_average && ep >= tail_start) {
            for (size_t c = 0; c < dim; ++c) {
                acc_scale[c] += adapter.scale[c];
                acc_shift[c] += adapter.shift[c];
            }
            ++acc_count;
        }
    }

    if (cfg.tail_average && acc_count > 0) {
        for (size_t c = 0; c < dim; ++c) {
            adapter.scale[c] = acc_scale[c] / acc_count;
            adapter.shift[c] = acc_shift[c] / acc_count;
        }
    }
    for (size_t c = 0; c < dim; ++c) {
        mean_scale[c] += adapter.scale[c];
        mean_shift[c] += adapter.shift[c];
    }
    }  // restart loop

    AffineAdapter final_adapter(dim);
    for (size_t c = 0; c < dim; ++c) {
        final_adapter.scale[c] = mean_scale[c] / cfg.restarts;
        final_adapter.shift[c] = mean_shift[c] / cfg.restarts;
    }
    return {std::move(final_adapter), std::move(trace)};
}

void save_trace(const AdaptTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write trace file: " + path);
    for (const StepRecord& r : trace.steps) {
        json j;
        j["step"] = r.step;
        j["loss"] = r.loss;
        j["residual"] = r.residual;
        j["pairs"] = r.pairs;
        j["anomalous_pairs"] = r.anomalous_pairs;
        j["grad_norm"] = r.grad_norm;
        out << j.dump() << "\n";
    }
    if (!out) throw config_error("failed writing trace file: " + path);
}

namespace {

void push_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xFF));
    out.push_back(static_cast<char>((bits >> 8) & 0xFF));
    out.push_back(static_cast<char>((bits >> 16) & 0xFF));
    out.push_back(static_cast<char>((bits >> 24) & 0xFF));
}

float pull_f32(const unsigned char* p) {
    uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_adapter(const AffineAdapter& adapter, const std::string& meta_path) {
    fs_::path p(meta_path);
    fs_::path payload = p;
    payload.replace_extension(".f32");

    json meta;
    meta["version"] = 1;
    meta["kind"] = "adapter";
    meta["dim"] = adapter.dim();
    meta["payload"] = payload.filename().string();

    std::string bytes;
    bytes.reserve(adapter.dim() * 8);
    for (double v : adapter.scale) push_f32(bytes, static_cast<float>(v));
    for (double v : adapter.shift) push_f32(bytes, static_cast<float>(v));

    std::ofstream mo(meta_path, std::ios::binary | std::ios::trunc);
    if (!mo) throw config_error("cannot write adapter meta: " + meta_path);
    mo << meta.dump(2) << "\n";
    fs_::path ppath = p.parent_path() / meta["payload"].get<std::string>();
    std::ofstream po(ppath, std::ios::binary | std::ios::trunc);
    if (!po) throw config_error("cannot write adapter payload: " + ppath.string());
    po.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

AffineAdapter load_adapter(const std::string& meta_path) {
    std::ifstream in(meta_path);
    if (!in) throw config_error("cannot open adapter meta: " + meta_path);
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw data_error("malformed adapter meta " + meta_path + ": " + e.what());
    }
    try {
        if (meta.at("kind").get<std::string>() != "adapter")
            throw data_error("not an adapter file: " + meta_path);
        const size_t dim = meta.at("dim").get<size_t>();
        fs_::path ppath =
            fs_::path(meta_path).parent_path() / meta.at("payload").get<std::string>();
        std::ifstream pin(ppath, std::ios::binary);
        if (!pin) throw data_error("missing adapter payload: " + ppath.string());
        std::string bytes((std::istreambuf_iterator<char>(pin)),
                          std::istreambuf_iterator<char>());
        if (bytes.size() != dim * 8)
            throw data_error("adapter payload length mismatch in " + ppath.string() +
                             ": expected " + std::to_string(dim * 8) + " bytes, found " +
                             std::to_string(bytes.size()));
        AffineAdapter a(dim);
        const unsigned char* pb = reinterpret_cast<const unsigned char*>(bytes.data());
        for (size_t c = 0; c < dim; ++c) a.scale[c] = pull_f32(pb + 4 * c);
        for (size_t c = 0; c < dim; ++c) a.shift[c] = pull_f32(pb + 4 * (dim + c));
        return a;
    } catch (const json::exception& e) {
        throw data_error("malformed adapter meta " + meta_path + ": " + e.what());
    }
}

}  // namespace roda::alignment
