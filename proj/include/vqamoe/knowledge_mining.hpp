#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vqamoe/rng.hpp"

namespace vqamoe::knowledge_mining {

// A question with its pooled representation and the base model's
// confidence on its own answer.
struct ScoredExample {
    std::string id;
    std::vector<double> embedding;
    double confidence = 0.0;          // in [0,1]
    std::string reference_label;      // "ocr" | "clock" | "vision", empty if unknown
};

struct Clustering {
    std::vector<std::vector<double>> centroids;
    std::vector<std::size_t> assignment;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

// Strictly below the threshold, order preserved.
std::vector<ScoredExample> filter_low_confidence(const std::vector<ScoredExample>& examples,
                                                 double threshold = 0.1);

// Lloyd's iterations from k-means++ seeding until the assignment stops
// changing or 300 iterations. Empty clusters are re-seeded at the point
// farthest from its centroid. Deterministic given the seed.
Clustering kmeans(const std::vector<std::vector<double>>& embeddings, std::size_t k,
                  std::uint64_t seed);

// Majority reference label per cluster; ties break to the lexicographically
// smallest label.
std::vector<std::string> project_clusters(const Clustering& clustering,
                                          const std::vector<std::string>& reference_labels);

struct ConsistencyMetrics {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

// Standard multiclass metrics; macro averages are unweighted over the
// label set present in the references.
ConsistencyMetrics consistency_metrics(const std::vector<std::string>& predicted,
                                       const std::vector<std::string>& reference);

struct ClusterSummary {
    std::size_t size = 0;
    double percent = 0.0;
    std::string majority_label; // empty without references
    std::vector<std::string> exemplar_ids;
};

struct MiningReport {
    std::size_t filtered_count = 0;
    std::size_t total_count = 0;
    std::vector<ClusterSummary> clusters;
    bool has_labels = false;
    ConsistencyMetrics metrics; // valid iff has_labels
};

MiningReport mine(const std::vector<ScoredExample>& examples, double threshold, std::size_t k,
                  std::uint64_t seed, std::size_t exemplars_per_cluster = 5);

std::string report_json(const MiningReport& report);

// CSV grid: one row per K in [k_min, k_max] with the four consistency
// metrics.
std::string k_sweep_csv(const std::vector<ScoredExample>& examples, double threshold,
                        std::size_t k_min, std::size_t k_max, std::uint64_t seed);

} // namespace vqamoe::knowledge_mining
