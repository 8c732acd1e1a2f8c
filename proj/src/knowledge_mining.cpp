#include "vqamoe/knowledge_mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vqamoe::knowledge_mining {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = a[i] - b[i];
        d += r * r;
    }
    return d;
}

} // namespace

std::vector<ScoredExample> filter_low_confidence(const std::vector<ScoredExample>& examples,
                                                 double threshold) {
    if (threshold <= 0.0 || threshold > 1.0) {
        throw std::invalid_argument("filter_low_confidence: threshold must be in (0,1]");
    }
    std::vector<ScoredExample> out;
    for (const auto& e : examples) {
        if (e.confidence < threshold) out.push_back(e);
    }
    return out;
}

Clustering kmeans(const std::vector<std::vector<double>>& embeddings, std::size_t k,
                  std::uint64_t seed) {
    const std::size_t n = embeddings.size();
    if (k < 1 || k > n) {
        throw std::invalid_argument("kmeans: need 1 <= K <= " + std::to_string(n) + ", got " +
                                    std::to_string(k));
    }
    const std::size_t dim = embeddings.front().size();
    for (const auto& e : embeddings) {
        if (e.size() != dim) throw std::invalid_argument("kmeans: ragged embeddings");
    }
    Rng rng = Rng::stream(seed, "kmeans");

    // k-means++ seeding.
    Clustering c;
    c.centroids.push_back(embeddings[static_cast<std::size_t>(
        rng.randint(0, static_cast<std::int64_t>(n) - 1))]);
    std::vector<double> d2(n);
    while (c.centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& cen : c.centroids) best = std::min(best, sq_dist(embeddings[i], cen));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform(0.0, total);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(n) - 1));
        }
        c.centroids.push_back(embeddings[pick]);
    }

    c.assignment.assign(n, k); // force a change on the first pass
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < 300; ++iter) {
        // Assignment.
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                const double d = sq_dist(embeddings[i], c.centroids[j]);
                if (d < bd) {
                    bd = d;
                    best = j;
                }
            }
            if (c.assignment[i] != best) {
                c.assignment[i] = best;
                changed = true;
            }
            inertia += bd;
        }
        if (inertia > prev_inertia + 1e-9) {
            throw std::logic_error("kmeans: inertia increased across an iteration");
        }
        prev_inertia = inertia;
        c.inertia = inertia;
        c.iterations = iter + 1;
        if (!changed) break;

        // Update, re-seeding empty clusters at the globally farthest point.
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < dim; ++d) sums[c.assignment[i]][d] += embeddings[i][d];
            ++counts[c.assignment[i]];
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                std::size_t far = 0;
                double fd = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = sq_dist(embeddings[i], c.centroids[c.assignment[i]]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                c.centroids[j] = embeddings[far];
                // Inertia may rise transiently after a reseed; reset the monotonicity bar.
                prev_inertia = std::numeric_limits<double>::infinity();
            } else {
                for (std::size_t d = 0; d < dim; ++d) {
                    c.centroids[j][d] = sums[j][d] / static_cast<double>(counts[j]);
                }
            }
        }
    }
    return c;
}

std::vector<std::string> project_clusters(const Clustering& clustering,
                                          const std::vector<std::string>& reference_labels) {
    if (reference_labels.size() != clustering.assignment.size()) {
        throw std::invalid_argument("project_clusters: label count mismatch");
    }
    const std::size_t k = clustering.centroids.size();
    std::vector<std::map<std::string, std::size_t>> votes(k);
    for (std::size_t i = 0; i < reference_labels.size(); ++i) {
        if (reference_labels[i].empty()) {
            throw std::invalid_argument("project_clusters: example without reference label");
        }
        ++votes[clustering.assignment[i]][reference_labels[i]];
    }
    std::vector<std::string> out(k);
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t best = 0;
        for (const auto& [label, count] : votes[j]) {
            // std::map iterates labels in order, so ties keep the smallest.
            if (count > best) {
                best = count;
                out[j] = label;
            }
        }
    }
    return out;
}

ConsistencyMetrics consistency_metrics(const std::vector<std::string>& predicted,
                                       const std::vector<std::string>& reference) {
    if (predicted.size() != reference.size() || predicted.empty()) {
        throw std::invalid_argument("consistency_metrics: need equal non-empty label lists");
    }
    std::set<std::string> labels(reference.begin(), reference.end());

    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] == reference[i]) ++correct;
    }

    ConsistencyMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
    for (const std::string& label : labels) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            const bool p = predicted[i] == label, r = reference[i] == label;
            if (p && r) ++tp;
            else if (p) ++fp;
            else if (r) ++fn;
        }
        const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        m.macro_precision += prec;
        m.macro_recall += rec;
        m.macro_f1 += f1;
    }
    const double nl = static_cast<double>(labels.size());
    m.macro_precision /= nl;
    m.macro_recall /= nl;
    m.macro_f1 /= nl;
    return m;
}

MiningReport mine(const std::vector<ScoredExample>& examples, double threshold, std::size_t k,
                  std::uint64_t seed, std::size_t exemplars_per_cluster) {
    MiningReport report;
    report.total_count = examples.size();
    std::vector<ScoredExample> filtered = filter_low_confidence(examples, threshold);
    report.filtered_count = filtered.size();
    if (filtered.empty()) {
        throw std::runtime_error("mine: no examples below confidence threshold " +
                                 std::to_string(threshold));
    }
    if (filtered.size() < k) {
        throw std::runtime_error("mine: only " + std::to_string(filtered.size()) +
                                 " low-confidence examples for K=" + std::to_string(k) +
                                 "; use a smaller K");
    }

    std::vector<std::vector<double>> embeddings;
    for (const auto& e : filtered) embeddings.push_back(e.embedding);
    Clustering clustering = kmeans(embeddings, k, seed);

    report.has_labels = std::all_of(filtered.begin(), filtered.end(),
                                    [](const ScoredExample& e) { return !e.reference_label.empty(); });
    std::vector<std::string> projected_per_cluster;
    if (report.has_labels) {
        std::vector<std::string> refs;
        for (const auto& e : filtered) refs.push_back(e.reference_label);
        projected_per_cluster = project_clusters(clustering, refs);
        std::vector<std::string> predicted;
        for (std::size_t i = 0; i < filtered.size(); ++i) {
            predicted.push_back(projected_per_cluster[clustering.assignment[i]]);
        }
        report.metrics = consistency_metrics(predicted, refs);
    }

    report.clusters.resize(k);
    for (std::size_t i = 0; i < filtered.size(); ++i) {
        ClusterSummary& cs = report.clusters[clustering.assignment[i]];
        ++cs.size;
        if (cs.exemplar_ids.size() < exemplars_per_cluster) {
            cs.exemplar_ids.push_back(filtered[i].id);
        }
    }
    for (std::size_t j = 0; j < k; ++j) {
        report.clusters[j].percent =
            100.0 * static_cast<double>(report.clusters[j].size) /
            static_cast<double>(filtered.size());
        if (report.has_labels) report.clusters[j].majority_label = projected_per_cluster[j];
    }
    return report;
}

std::string report_json(const MiningReport& report) {
    nlohmann::json j;
    j["total_examples"] = report.total_count;
    j["low_confidence_examples"] = report.filtered_count;
    j["clusters"] = nlohmann::json::array();
    for (const auto& c : report.clusters) {
        nlohmann::json cj{{"size", c.size}, {"percent", c.percent}, {"exemplars", c.exemplar_ids}};
        if (!c.majority_label.empty()) cj["label"] = c.majority_label;
        j["clusters"].push_back(cj);
    }
    if (report.has_labels) {
        j["consistency"] = {{"accuracy", report.metrics.accuracy},
                            {"macro_precision", report.metrics.macro_precision},
                            {"macro_recall", report.metrics.macro_recall},
                            {"macro_f1", report.metrics.macro_f1}};
    }
    return j.dump(2);
}

std::string k_sweep_csv(const std::vector<ScoredExample>& examples, double threshold,
                        std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
    std::ostringstream os;
    os << "k,accuracy,macro_precision,macro_recall,macro_f1\n";
    for (std::size_t k = k_min; k <= k_max; ++k) {
        MiningReport r = mine(examples, threshold, k, seed);
        if (!r.has_labels) {
            throw std::runtime_error("k_sweep_csv: reference labels required");
        }
        os << k << "," << r.metrics.accuracy << "," << r.metrics.macro_precision << ","
           << r.metrics.macro_recall << "," << r.metrics.macro_f1 << "\n";
    }
    return os.str();
}

} // namespace vqamoe::knowledge_mining
