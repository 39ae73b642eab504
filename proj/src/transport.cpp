#include "roda/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "roda/error.hpp"
#include "roda/parallel.hpp"

namespace roda::transport {

namespace {

constexpr size_t kRowChunk = 16;

double lse_row(const double* c_row, const double* pot, size_t m, double inv_eps) {
    // log sum_j exp((pot_j - c_j) * inv_eps), max-shifted.
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < m; ++j) {
        double v = (pot[j] - c_row[j]) * inv_eps;
        if (v > mx) mx = v;
    }
    double s = 0.0;
    for (size_t j = 0; j < m; ++j) s += std::exp((pot[j] - c_row[j]) * inv_eps - mx);
    return mx + std::log(s);
}

}  // namespace

CostMatrix cost_matrix(const Matrix& target_patches, const memory_bank::MemoryBank& bank,
                       const alignment::AffineAdapter* adapter) {
    const size_t n = target_patches.rows;
    const size_t m = bank.size();
    const size_t d = target_patches.cols;
    if (d != bank.dim())
        throw data_error("cost_matrix: patch dim " + std::to_string(d) + " != bank dim " +
                         std::to_string(bank.dim()));
    if (adapter && adapter->dim() != d) throw data_error("cost_matrix: adapter dim mismatch");

    CostMatrix C;
    C.values = Matrix(n, m);
    parallel_chunks(n, kRowChunk, [&](size_t b, size_t e) {
        std::vector<double> w(d);
        for (size_t i = b; i < e; ++i) {
            const double* z = target_patches.row(i);
            if (adapter)
                adapter->apply_row(z, w.data());
            else
                std::copy(z, z + d, w.begin());
            double* out = C.values.row(i);
            for (size_t j = 0; j < m; ++j) {
                const double* mk = bank.prototypes.row(j);
                double s = 0.0;
                for (size_t c = 0; c < d; ++c) {
                    double diff = w[c] - mk[c];
                    s += diff * diff;
                }
                out[j] = std::sqrt(s);
            }
        }
    });
    C.row_ids.resize(n);
    for (size_t i = 0; i < n; ++i) C.row_ids[i] = static_cast<uint32_t>(i);
    C.col_ids.resize(m);
    for (size_t j = 0; j < m; ++j) C.col_ids[j] = static_cast<uint32_t>(j);
    return C;
}

TransportPlan sinkhorn(const CostMatrix& C, double epsilon, int max_iter, double tol) {
    const size_t n = C.rows();
    const size_t m = C.cols();
    if (n == 0 || m == 0) throw data_error("sinkhorn: empty cost matrix");
    if (!(epsilon > 0.0)) throw config_error("sinkhorn: epsilon must be positive");
    for (double v : C.values.data)
        if (!std::isfinite(v)) throw numeric_error("sinkhorn: non-finite cost entry");

    const double inv_eps = 1.0 / epsilon;
    const double a = 1.0 / static_cast<double>(n);  // row marginal
    const double b = 1.0 / static_cast<double>(m);  // column marginal
    const double log_a = std::log(a);
    const double log_b = std::log(b);

    // Column passes run over a transposed copy to stay cache-friendly.
    Matrix Ct(m, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) Ct.at(j, i) = C.values.at(i, j);

    std::vector<double> f(n, 0.0), g(m, 0.0), lse(n, 0.0);
    double raw_residual = std::numeric_limits<double>::infinity();
    int iters = 0;
    bool converged = false;

    for (int it = 0; it < max_iter; ++it) {
        // Row logsumexp against the current g; also yields the row-marginal
        // residual of the pair (previous f, g) for free, since that pair has
        // exact column sums by construction of the last g update.
        parallel_chunks(n, kRowChunk, [&](size_t lo, size_t hi) {
            for (size_t i = lo; i < hi; ++i)
                lse[i] = lse_row(C.values.row(i), g.data(), m, inv_eps);
        });
        if (it > 0) {
            raw_residual = parallel_max_chunks(n, kRowChunk, [&](size_t lo, size_t hi) {
                double worst = 0.0;
                for (size_t i = lo; i < hi; ++i) {
                    double row_sum = std::exp(f[i] * inv_eps + lse[i]);
                    double dev = std::fabs(row_sum - a);
                    if (dev > worst) worst = dev;
                }
                return worst;
            });
            if (!std::isfinite(raw_residual))
                throw numeric_error("sinkhorn: non-finite marginal residual");
            if (raw_residual <= tol) {
                converged = true;
                break;  // plan built from (previous f, g)
            }
        }
        for (size_t i = 0; i < n; ++i) f[i] = epsilon * (log_a - lse[i]);
        parallel_chunks(m, kRowChunk, [&](size_t lo, size_t hi) {
            for (size_t j = lo; j < hi; ++j) {
                double l = lse_row(Ct.row(j), f.data(), n, inv_eps);
                g[j] = epsilon * (log_b - l);
            }
        });
        ++iters;
    }

    TransportPlan plan;
    plan.epsilon = epsilon;
    plan.iterations_used = iters;
    plan.convergence_warning = !converged && raw_residual > 10.0 * tol;

    plan.gamma = Matrix(n, m);
    parallel_chunks(n, kRowChunk, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            const double* c_row = C.values.row(i);
            double* out = plan.gamma.row(i);
            for (size_t j = 0; j < m; ++j)
                out[j] = std::exp((f[i] + g[j] - c_row[j]) * inv_eps);
        }
    });
    for (double v : plan.gamma.data)
        if (!std::isfinite(v)) throw numeric_error("sinkhorn: non-finite plan entry");

    // Round to exact marginals: scale rows down to a, then columns down to b,
    // then distribute the remaining mass as a rank-one outer product.
    std::vector<double> row_sum(n, 0.0), col_sum(m, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* r = plan.gamma.row(i);
        double s = 0.0;
        for (size_t j = 0; j < m; ++j) s += r[j];
        row_sum[i] = s;
    }
    for (size_t i = 0; i < n; ++i) {
        double sc = row_sum[i] > a && row_sum[i] > 0.0 ? a / row_sum[i] : 1.0;
        if (sc != 1.0) {
            double* r = plan.gamma.row(i);
            for (size_t j = 0; j < m; ++j) r[j] *= sc;
        }
    }
    for (size_t i = 0; i < n; ++i) {
        const double* r = plan.gamma.row(i);
        for (size_t j = 0; j < m; ++j) col_sum[j] += r[j];
    }
    std::vector<double> col_scale(m, 1.0);
    for (size_t j = 0; j < m; ++j)
        if (col_sum[j] > b && col_sum[j] > 0.0) col_scale[j] = b / col_sum[j];
    for (size_t i = 0; i < n; ++i) {
        double* r = plan.gamma.row(i);
        for (size_t j = 0; j < m; ++j) r[j] *= col_scale[j];
    }
    std::fill(row_sum.begin(), row_sum.end(), 0.0);
    std::fill(col_sum.begin(), col_sum.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* r = plan.gamma.row(i);
        double s = 0.0;
        for (size_t j = 0; j < m; ++j) {
            s += r[j];
            col_sum[j] += r[j];
        }
        row_sum[i] = s;
    }
    double missing = 0.0;
    for (size_t i = 0; i < n; ++i) missing += a - row_sum[i];
    if (missing > 0.0) {
        for (size_t i = 0; i < n; ++i) {
            double ea = a - row_sum[i];
            if (ea <= 0.0) continue;
            double* r = plan.gamma.row(i);
            for (size_t j = 0; j < m; ++j) {
                double eb = b - col_sum[j];
                if (eb > 0.0) r[j] += ea * eb / missing;
            }
        }
    }

    double res = 0.0;
    std::fill(col_sum.begin(), col_sum.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* r = plan.gamma.row(i);
        double s = 0.0;
        for (size_t j = 0; j < m; ++j) {
            s += r[j];
            col_sum[j] += r[j];
        }
        res = std::max(res, std::fabs(s - a));
    }
    for (size_t j = 0; j < m; ++j) res = std::max(res, std::fabs(col_sum[j] - b));
    plan.marginal_residual = res;
    return plan;
}

ExactOtResult exact_ot(const CostMatrix& C) {
    const size_t n = C.rows();
    const size_t m = C.cols();
    if (n == 0 || m == 0) throw data_error("exact_ot: empty cost matrix");
    if (n * m > 10000)
        throw data_error("exact_ot: instance size " + std::to_string(n * m) +
                         " exceeds the 10^4 oracle limit");

    // Min-cost max-flow on integer masses: each row supplies m units, each
    // column absorbs n units (total n*m), so uniform marginals are integral.
    // Successive shortest paths with potentials; costs are nonnegative, so
    // Dijkstra applies from the first augmentation.
    const int V = static_cast<int>(n + m) + 2;
    const int S = V - 2;
    const int T = V - 1;
    const double INF = std::numeric_limits<double>::infinity();

    struct Edge {
        int to;
        long cap;
        double cost;
        int rev;
    };
    std::vector<std::vector<Edge>> adj(V);
    auto add_edge = [&](int u, int v, long cap, double cost) {
        adj[u].push_back({v, cap, cost, static_cast<int>(adj[v].size())});
        adj[v].push_back({u, 0, -cost, static_cast<int>(adj[u].size()) - 1});
    };
    for (size_t i = 0; i < n; ++i) add_edge(S, static_cast<int>(i), static_cast<long>(m), 0.0);
    for (size_t j = 0; j < m; ++j)
        add_edge(static_cast<int>(n + j), T, static_cast<long>(n), 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j)
            add_edge(static_cast<int>(i), static_cast<int>(n + j),
                     static_cast<long>(n * m), C.values.at(i, j));

    std::vector<double> pot(V, 0.0), dist(V);
    std::vector<int> pe_node(V), pe_idx(V);
    long flow = 0;
    const long want = static_cast<long>(n) * static_cast<long>(m);
    while (flow < want) {
        std::fill(dist.begin(), dist.end(), INF);
        std::vector<bool> done(V, false);
        dist[S] = 0.0;
        for (;;) {
            int u = -1;
            double best = INF;
            for (int v = 0; v < V; ++v)
                if (!done[v] && dist[v] < best) {
                    best = dist[v];
                    u = v;
                }
            if (u < 0) break;
            done[u] = true;
            for (size_t k = 0; k < adj[u].size(); ++k) {
                const Edge& e = adj[u][k];
                if (e.cap <= 0) continue;
                double nd = dist[u] + e.cost + pot[u] - pot[e.to];
                if (nd < dist[e.to] - 1e-15) {
                    dist[e.to] = nd;
                    pe_node[e.to] = u;
                    pe_idx[e.to] = static_cast<int>(k);
                }
            }
        }
        if (dist[T] == INF) throw numeric_error("exact_ot: flow network disconnected");
        for (int v = 0; v < V; ++v)
            if (dist[v] < INF) pot[v] += dist[v];
        long push = want - flow;
        for (int v = T; v != S; v = pe_node[v])
            push = std::min(push, adj[pe_node[v]][pe_idx[v]].cap);
        for (int v = T; v != S; v = pe_node[v]) {
            Edge& e = adj[pe_node[v]][pe_idx[v]];
            e.cap -= push;
            adj[v][e.rev].cap += push;
        }
        flow += push;
    }

    ExactOtResult result;
    result.gamma = Matrix(n, m);
    const double unit = 1.0 / static_cast<double>(want);
    for (size_t i = 0; i < n; ++i) {
        for (const Edge& e : adj[static_cast<int>(i)]) {
            if (e.to >= static_cast<int>(n) && e.to < static_cast<int>(n + m)) {
                long used = static_cast<long>(n * m) - e.cap;
                if (used > 0)
                    result.gamma.at(i, static_cast<size_t>(e.to) - n) =
                        static_cast<double>(used) * unit;
            }
        }
    }
    double cost = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) cost += result.gamma.at(i, j) * C.values.at(i, j);
    result.cost = cost;
    return result;
}

HungarianResult hungarian_assignment(const CostMatrix& C) {
    const size_t n = C.rows();
    const size_t m = C.cols();
    if (n == 0 || m == 0) throw data_error("hungarian_assignment: empty cost matrix");
    for (double v : C.values.data)
        if (!std::isfinite(v)) throw numeric_error("hungarian_assignment: non-finite cost");
    const size_t N = std::max(n, m);

    // Shortest augmenting path formulation (Jonker-Volgenant style) on the
    // virtually padded square matrix; pad entries cost 0.
    auto cost_at = [&](size_t i, size_t j) -> double {
        return (i < n && j < m) ? C.values.at(i, j) : 0.0;
    };
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(N + 1, 0.0), v(N + 1, 0.0);
    std::vector<size_t> match(N + 1, 0);  // column -> row (1-based, 0 = free)
    std::vector<size_t> way(N + 1, 0);

    for (size_t i = 1; i <= N; ++i) {
        match[0] = i;
        size_t j0 = 0;
        std::vector<double> minv(N + 1, INF);
        std::vector<bool> used(N + 1, false);
        do {
            used[j0] = true;
            size_t i0 = match[j0], j1 = 0;
            double delta = INF;
            for (size_t j = 1; j <= N; ++j) {
                if (used[j]) continue;
                double cur = cost_at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (size_t j = 0; j <= N; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }

    HungarianResult result;
    for (size_t j = 1; j <= N; ++j) {
        size_t i = match[j];
        if (i >= 1 && i <= n && j <= m) {
            result.pairs.emplace_back(static_cast<uint32_t>(i - 1),
                                      static_cast<uint32_t>(j - 1));
            result.total_cost += C.values.at(i - 1, j - 1);
        }
    }
    std::sort(result.pairs.begin(), result.pairs.end());
    return result;
}

DiscreteAssignment discretize(const TransportPlan& plan) {
    const size_t n = plan.gamma.rows;
    const size_t m = plan.gamma.cols;
    if (n == 0 || m == 0) throw data_error("discretize: empty plan");

    std::vector<std::pair<uint32_t, uint32_t>> pairs;
    pairs.reserve(n + m);
    for (size_t i = 0; i < n; ++i) {
        const double* r = plan.gamma.row(i);
        size_t best = 0;
        for (size_t j = 1; j < m; ++j)
            if (r[j] > r[best]) best = j;  // strict: ties keep the lowest index
        pairs.emplace_back(static_cast<uint32_t>(i), static_cast<uint32_t>(best));
    }
    for (size_t j = 0; j < m; ++j) {
        size_t best = 0;
        double best_v = plan.gamma.at(0, j);
        for (size_t i = 1; i < n; ++i) {
            double v = plan.gamma.at(i, j);
            if (v > best_v) {
                best_v = v;
                best = i;
            }
        }
        pairs.emplace_back(static_cast<uint32_t>(best), static_cast<uint32_t>(j));
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return DiscreteAssignment{std::move(pairs)};
}

double assignment_cost(const DiscreteAssignment& pairs, const CostMatrix& C) {
    double total = 0.0;
    for (const auto& [i, j] : pairs.pairs) {
        if (i >= C.rows() || j >= C.cols())
            throw data_error("assignment_cost: pair (" + std::to_string(i) + ", " +
                             std::to_string(j) + ") out of bounds");
        total += C.values.at(i, j);
    }
    return total;
}

double plan_cost(const TransportPlan& plan, const CostMatrix& C) {
    if (plan.gamma.rows != C.rows() || plan.gamma.cols != C.cols())
        throw data_error("plan_cost: plan/cost shape mismatch");
    const size_t total = plan.gamma.data.size();
    return parallel_sum_chunks(total, 4096, [&](size_t b, size_t e) {
        double s = 0.0;
        for (size_t k = b; k < e; ++k) s += plan.gamma.data[k] * C.values.data[k];
        return s;
    });
}

double mean_cost(const CostMatrix& C) {
    const size_t total = C.values.data.size();
    if (total == 0) return 0.0;
    double s = parallel_sum_chunks(total, 4096, [&](size_t b, size_t e) {
        double acc = 0.0;
        for (size_t k = b; k < e; ++k) acc += C.values.data[k];
        return acc;
    });
    return s / static_cast<double>(total);
}

}  // namespace roda::transport
