#include "ewe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ewe/attacks.hpp"
#include "ewe/extraction.hpp"

namespace ewe {

std::vector<std::vector<double>> activation_frequency(const Model& m, const Tensor& inputs) {
    if (inputs.shape.empty() || inputs.shape[0] == 0)
        throw ContractError("activation_frequency: empty data");
    std::vector<PrunableUnit> units = activation_frequencies(m, inputs);
    std::vector<std::vector<double>> out;
    int current_layer = -1;
    for (const PrunableUnit& u : units) {
        if (u.layer != current_layer) {
            out.emplace_back();
            current_layer = u.layer;
        }
        out.back().push_back(u.frequency);
    }
    return out;
}

double cka(const Tensor& reps_a, const Tensor& reps_b) {
    if (reps_a.shape.size() != 2 || reps_b.shape.size() != 2)
        throw ContractError("cka: want rank-2 representations");
    const int n = reps_a.shape[0];
    if (reps_b.shape[0] != n)
        throw ContractError("cka: sample counts differ, " + std::to_string(n) + " vs " +
                            std::to_string(reps_b.shape[0]));
    if (n < 2) throw ContractError("cka: need at least 2 samples");
    const int da = reps_a.shape[1], db = reps_b.shape[1];

    auto centered = [n](const Tensor& t, int d) {
        std::vector<double> out(static_cast<size_t>(n) * d);
        for (int j = 0; j < d; ++j) {
            double mean = 0.0;
            for (int i = 0; i < n; ++i) mean += (*t.data)[static_cast<long>(i) * d + j];
            mean /= n;
            for (int i = 0; i < n; ++i)
                out[static_cast<size_t>(i) * d + j] = (*t.data)[static_cast<long>(i) * d + j] - mean;
        }
        return out;
    };
    std::vector<double> a = centered(reps_a, da);
    std::vector<double> b = centered(reps_b, db);

    auto cross_fro2 = [n](const std::vector<double>& x, int dx, const std::vector<double>& y,
                          int dy) {
        // || X^T Y ||_F^2
        double total = 0.0;
        for (int i = 0; i < dx; ++i)
            for (int j = 0; j < dy; ++j) {
                double acc = 0.0;
                for (int s = 0; s < n; ++s)
                    acc += x[static_cast<size_t>(s) * dx + i] * y[static_cast<size_t>(s) * dy + j];
                total += acc * acc;
            }
        return total;
    };

    const double num = cross_fro2(b, db, a, da);
    const double den = std::sqrt(cross_fro2(a, da, a, da)) * std::sqrt(cross_fro2(b, db, b, db));
    if (den <= 0.0) {
        std::fprintf(stderr, "cka: zero-variance representation, similarity defined as 0\n");
        return 0.0;
    }
    return num / den;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (column eigenvectors).
void jacobi_eigen(std::vector<double>& a, int d, std::vector<double>& values,
                  std::vector<double>& vectors) {
    vectors.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) vectors[static_cast<size_t>(i) * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += a[static_cast<size_t>(p) * d + q] *
                                                   a[static_cast<size_t>(p) * d + q];
        if (off < 1e-22) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                const double apq = a[static_cast<size_t>(p) * d + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p) * d + p];
                const double aqq = a[static_cast<size_t>(q) * d + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int r = 0; r < d; ++r) {
                    const double arp = a[static_cast<size_t>(r) * d + p];
                    const double arq = a[static_cast<size_t>(r) * d + q];
                    a[static_cast<size_t>(r) * d + p] = c * arp - s * arq;
                    a[static_cast<size_t>(r) * d + q] = s * arp + c * arq;
                }
                for (int r = 0; r < d; ++r) {
                    const double apr = a[static_cast<size_t>(p) * d + r];
                    const double aqr = a[static_cast<size_t>(q) * d + r];
                    a[static_cast<size_t>(p) * d + r] = c * apr - s * aqr;
                    a[static_cast<size_t>(q) * d + r] = s * apr + c * aqr;
                }
                for (int r = 0; r < d; ++r) {
                    const double vrp = vectors[static_cast<size_t>(r) * d + p];
                    const double vrq = vectors[static_cast<size_t>(r) * d + q];
                    vectors[static_cast<size_t>(r) * d + p] = c * vrp - s * vrq;
                    vectors[static_cast<size_t>(r) * d + q] = s * vrp + c * vrq;
                }
            }
    }
    values.resize(d);
    for (int i = 0; i < d; ++i) values[i] = a[static_cast<size_t>(i) * d + i];
}

}  // namespace

PcaResult pca_project(const Tensor& reps, int dims) {
    if (reps.shape.size() != 2) throw ContractError("pca: want rank-2 representations");
    const int n = reps.shape[0], d = reps.shape[1];
    if (dims < 1) throw ContractError("pca: dims must be >= 1");
    if (n <= dims)
        throw ContractError("pca: need more samples than components (" + std::to_string(n) +
                            " <= " + std::to_string(dims) + ")");

    std::vector<double> mean(d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[j] += (*reps.data)[static_cast<long>(i) * d + j];
    for (double& v : mean) v /= n;

    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < d; ++p) {
            const double xp = (*reps.data)[static_cast<long>(i) * d + p] - mean[p];
            for (int q = p; q < d; ++q) {
                const double xq = (*reps.data)[static_cast<long>(i) * d + q] - mean[q];
                cov[static_cast<size_t>(p) * d + q] += xp * xq;
            }
        }
    for (int p = 0; p < d; ++p)
        for (int q = p; q < d; ++q) {
            cov[static_cast<size_t>(p) * d + q] /= (n - 1);
            cov[static_cast<size_t>(q) * d + p] = cov[static_cast<size_t>(p) * d + q];
        }

    std::vector<double> values, vectors;
    jacobi_eigen(cov, d, values, vectors);

    std::vector<int> order(d);
    for (int i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });

    double total_var = 0.0;
    for (double v : values) total_var += std::max(v, 0.0);

    PcaResult res;
    res.projected = zeros({n, dims});
    const double rank_eps = 1e-12 * std::max(total_var, 1.0);
    for (int comp = 0; comp < dims; ++comp) {
        const int src = order[comp];
        if (values[src] <= rank_eps) {
            std::fprintf(stderr, "pca: rank-deficient below %d components, padding with zeros\n",
                         comp + 1);
            for (int rest = comp; rest < dims; ++rest) res.explained_variance.push_back(0.0);
            break;
        }
        // sign convention: the largest-magnitude loading is positive
        int big = 0;
        for (int j = 1; j < d; ++j)
            if (std::abs(vectors[static_cast<size_t>(j) * d + src]) >
                std::abs(vectors[static_cast<size_t>(big) * d + src]))
                big = j;
        const double flip = vectors[static_cast<size_t>(big) * d + src] < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j)
                acc += ((*reps.data)[static_cast<long>(i) * d + j] - mean[j]) *
                       vectors[static_cast<size_t>(j) * d + src];
            (*res.projected.data)[static_cast<long>(i) * dims + comp] =
                static_cast<float>(flip * acc);
        }
        res.explained_variance.push_back(total_var > 0.0 ? values[src] / total_var : 0.0);
    }
    return res;
}

std::vector<SweepRow> sweep_tradeoff(const std::vector<SweepPointSpec>& grid,
                                     const Dataset& train_set, const Dataset& test_set,
                                     const ModelSpec& spec, const TrainConfig& base_cfg,
                                     const WatermarkSpec& base_wm, const Dataset* ood) {
    if (grid.empty()) throw ContractError("sweep: empty grid");

    // the clean model depends only on the seed, share it across points
    TrainConfig clean_cfg = base_cfg;
    clean_cfg.seed = base_cfg.seed ^ 0x6b43a9b5d2f8e301ULL;
    Model clean = train_clean(spec, train_set, nullptr, clean_cfg).model;

    std::vector<SweepRow> rows;
    for (const SweepPointSpec& pt : grid) {
        SweepRow row;
        row.point = pt;
        try {
            WatermarkSpec wm_spec = base_wm;
            wm_spec.source_class = pt.source_class;
            wm_spec.target_class = pt.target_class;
            TrainConfig cfg = base_cfg;
            cfg.kappa = pt.kappa;
            cfg.t_init = pt.t_init;
            cfg.ratio_r = pt.ratio_r;

            Rng rng((cfg.seed));
            WatermarkSet wm =
                make_watermark(wm_spec, train_set, ood, clean, clean, cfg.t_init, rng);
            TrainResult victim = train_ewe(spec, train_set, wm, cfg, &test_set);
            row.victim_acc = evaluate(victim.model, test_set);
            row.victim_wm = watermark_success_rate(victim.model, wm);

            TrainConfig ext_cfg = cfg;
            ext_cfg.seed = cfg.seed ^ 0x243f6a8885a308d3ULL;
            ExtractionResult ext = extract_model(victim.model, train_set, spec, ext_cfg, &test_set);
            row.extracted_acc = evaluate(ext.model, test_set);
            row.extracted_wm = watermark_success_rate(ext.model, wm);
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace ewe
