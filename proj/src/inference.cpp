/*
 * Copyright 2026 The decaf authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License"). You may not use this file except in compliance
 * with the License. A copy of the License is located at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * or in the "license" file accompanying this file. This file is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES
 * OR CONDITIONS OF ANY KIND, either express or implied. See the License for the specific language governing permissions
 * and limitations under the License.
 */

#include "decaf/inference.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "decaf/common.hpp"
#include "decaf/parallel.hpp"

namespace decaf {

DenseMatrix embed_all_documents(const Model& m, const Dataset& d, int threads) {
    DenseMatrix out(d.num_points, m.dim);
    parallel_for(d.num_points, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto e = m.embed_document(d.documents[i]);
            std::copy(e.begin(), e.end(), out.row(i).begin());
        }
    });
    return out;
}

DenseMatrix precompute_classifiers(const Model& m) {
    DenseMatrix w(m.num_labels, m.dim);
    for (std::uint64_t l = 0; l < m.num_labels; ++l) {
        const auto wl = m.classifier_vector(static_cast<std::uint32_t>(l));
        std::copy(wl.begin(), wl.end(), w.row(l).begin());
    }
    return w;
}

namespace {

std::uint32_t resolve_beam(const Model& m, std::uint32_t requested) {
    const std::uint32_t beam = requested != 0 ? requested : m.shortlister.default_beam;
    require(beam >= 1 && beam <= m.num_clusters(), "predict: beam out of range");
    return beam;
}

void top_k_truncate(std::vector<std::pair<std::uint32_t, double>>& scored, int k) {
    const auto better = [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    if (scored.size() > static_cast<std::size_t>(k)) {
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), better);
        scored.resize(static_cast<std::size_t>(k));
    } else {
        std::sort(scored.begin(), scored.end(), better);
    }
}

} // namespace

Prediction predict(const Model& m, const SparseVector& x, const PredictOptions& opts, OpCounter* counter,
                   const DenseMatrix* precomputed) {
    require(opts.top_k >= 1, "predict: top_k must be >= 1");
    const std::uint32_t beam = resolve_beam(m, opts.beam);

    const auto x_hat = m.embed_document(x);
    const auto sl = shortlist(m.shortlister, std::span<const float>(x_hat), beam);
    if (counter != nullptr) {
        counter->shortlister_dots = m.num_clusters();
        counter->ranker_dots = 0;
    }

    std::vector<std::pair<std::uint32_t, double>> scored;
    scored.reserve(sl.label_ids.size());
    for (const auto& [cluster_id, cluster_score] : sl.cluster_ids) {
        const double gate = sigmoid(cluster_score);
        for (const auto l : m.shortlister.clustering.clusters[cluster_id]) {
            double s;
            if (precomputed != nullptr) {
                s = dot(precomputed->row(l), std::span<const float>(x_hat));
            } else {
                const auto wl = m.classifier_vector(l);
                s = dot(std::span<const float>(wl), std::span<const float>(x_hat));
            }
            if (counter != nullptr) ++counter->ranker_dots;
            scored.emplace_back(l, sigmoid(s) * gate);
        }
    }
    top_k_truncate(scored, opts.top_k);
    return Prediction{std::move(scored)};
}

Prediction predict_ensemble(const std::vector<Model>& instances, const SparseVector& x,
                            const PredictOptions& opts) {
    require(!instances.empty(), "predict_ensemble: no instances");
    if (instances.size() == 1) return predict(instances.front(), x, opts);

    // Every instance contributes its full shortlist scoring; absent labels
    // count as score 0 (mean) or worst rank (rank_sum).
    std::vector<std::vector<std::pair<std::uint32_t, double>>> per_instance;
    per_instance.reserve(instances.size());
    std::size_t max_candidates = 0;
    for (const auto& m : instances) {
        const std::uint32_t beam = resolve_beam(m, opts.beam);
        const auto x_hat = m.embed_document(x);
        const auto sl = shortlist(m.shortlister, std::span<const float>(x_hat), beam);
        std::vector<std::pair<std::uint32_t, double>> scored;
        scored.reserve(sl.label_ids.size());
        for (const auto& [cluster_id, cluster_score] : sl.cluster_ids) {
            const double gate = sigmoid(cluster_score);
            for (const auto l : m.shortlister.clustering.clusters[cluster_id]) {
                const auto wl = m.classifier_vector(l);
                scored.emplace_back(l, sigmoid(dot(std::span<const float>(wl), std::span<const float>(x_hat))) * gate);
            }
        }
        max_candidates = std::max(max_candidates, scored.size());
        per_instance.push_back(std::move(scored));
    }

    std::map<std::uint32_t, double> combined;
    if (opts.combine == EnsembleCombine::mean) {
        for (const auto& scored : per_instance)
            for (const auto& [l, s] : scored) combined[l] += s;
        for (auto& [l, s] : combined) s /= static_cast<double>(instances.size());
    } else {
        // Lower rank sum is better; flip so higher combined value wins.
        const double worst = static_cast<double>(max_candidates + 1);
        std::map<std::uint32_t, double> rank_sum;
        for (const auto& scored : per_instance) {
            std::vector<std::pair<std::uint32_t, double>> order = scored;
            std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
            });
            std::map<std::uint32_t, double> rank_of;
            for (std::size_t r = 0; r < order.size(); ++r) rank_of[order[r].first] = static_cast<double>(r + 1);
            for (const auto& other : per_instance)
                for (const auto& [l, s] : other) rank_of.try_emplace(l, worst);
            for (const auto& [l, r] : rank_of) rank_sum[l] += r;
        }
        const double scale = worst * static_cast<double>(instances.size()) + 1.0;
        for (const auto& [l, r] : rank_sum) combined[l] = (scale - r) / scale;
    }

    std::vector<std::pair<std::uint32_t, double>> scored(combined.begin(), combined.end());
    top_k_truncate(scored, opts.top_k);
    return Prediction{std::move(scored)};
}

std::vector<Prediction> predict_all(const std::vector<Model>& instances, const Dataset& d,
                                    const PredictOptions& opts, int threads) {
    std::vector<Prediction> preds(d.num_points);
    parallel_for(d.num_points, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) preds[i] = predict_ensemble(instances, d.documents[i], opts);
    });
    return preds;
}

OpCounter count_ops(const Model& m, const SparseVector& x, std::uint32_t beam) {
    OpCounter counter;
    PredictOptions opts;
    opts.beam = beam;
    opts.top_k = 1;
    predict(m, x, opts, &counter);
    return counter;
}

void write_predictions_file(const std::vector<Prediction>& preds, const std::string& path,
                            const std::vector<OpCounter>* counters) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.precision(9);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& ranked = preds[i].ranked;
        for (std::size_t k = 0; k < ranked.size(); ++k)
            out << (k ? " " : "") << ranked[k].first << ":" << ranked[k].second;
        if (counters != nullptr)
            out << (ranked.empty() ? "" : " ") << "#ops shortlister=" << (*counters)[i].shortlister_dots
                << " ranker=" << (*counters)[i].ranker_dots;
        out << "\n";
    }
}

std::vector<Prediction> read_predictions_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<Prediction> preds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        Prediction p;
        std::istringstream ss(line);
        std::string pair;
        while (ss >> pair) {
            const auto colon = pair.rfind(':');
            if (colon == std::string::npos)
                throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'label:score'");
            try {
                p.ranked.emplace_back(static_cast<std::uint32_t>(std::stoul(pair.substr(0, colon))),
                                      std::stod(pair.substr(colon + 1)));
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad prediction entry '" + pair + "'");
            }
        }
        preds.push_back(std::move(p));
    }
    return preds;
}

} // namespace decaf
