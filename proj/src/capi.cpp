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

#include "decaf/decaf_c.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "decaf/clustering.hpp"
#include "decaf/common.hpp"
#include "decaf/corpus.hpp"
#include "decaf/inference.hpp"
#include "decaf/metrics.hpp"
#include "decaf/model.hpp"
#include "decaf/trainer.hpp"

namespace {

thread_local std::string g_last_error;

constexpr const char* kVersion = "decaf 1.0.0";

int set_error(int code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const decaf::ParseError& e) {
        return set_error(DECAF_ERR_PARSE, e.what());
    } catch (const decaf::IoError& e) {
        return set_error(DECAF_ERR_IO, e.what());
    } catch (const decaf::DomainError& e) {
        return set_error(DECAF_ERR_DOMAIN, e.what());
    } catch (const std::exception& e) {
        return set_error(DECAF_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(DECAF_ERR_INTERNAL, "unknown error");
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::map<std::string, std::string> parse_kv_text(const char* text) {
    std::map<std::string, std::string> kv;
    if (text == nullptr) return kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw decaf::ParseError("options: expected key=value, got '" + line + "'");
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return kv;
}

} // namespace

struct decaf_dataset_t {
    decaf::Dataset data;
};

struct decaf_model_t {
    std::vector<decaf::Model> instances;
};

extern "C" {

const char* decaf_version(void) { return kVersion; }

const char* decaf_last_error(void) { return g_last_error.c_str(); }

void decaf_string_free(char* s) { std::free(s); }

int decaf_dataset_load(const char* xc_path, const char* label_text_path, const char* titles_path,
                       int one_based_tokens, decaf_dataset_t** out) {
    if (xc_path == nullptr || out == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        decaf::ParseOptions opts;
        opts.one_based_tokens = one_based_tokens != 0;
        auto handle = std::make_unique<decaf_dataset_t>();
        handle->data = decaf::parse_xc_file(xc_path, opts);
        if (label_text_path != nullptr) decaf::load_label_texts(handle->data, label_text_path, opts);
        if (titles_path != nullptr) {
            handle->data.raw_titles = decaf::read_title_file(titles_path);
            if (handle->data.raw_titles.size() != handle->data.num_points)
                throw decaf::ParseError("title file row count does not match the dataset");
        }
        handle->data.validate();
        *out = handle.release();
        return DECAF_OK;
    });
}

void decaf_dataset_free(decaf_dataset_t* d) { delete d; }

int decaf_dataset_dims(const decaf_dataset_t* d, uint64_t* num_points, uint64_t* num_tokens, uint64_t* num_labels) {
    if (d == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null dataset");
    if (num_points != nullptr) *num_points = d->data.num_points;
    if (num_tokens != nullptr) *num_tokens = d->data.num_tokens;
    if (num_labels != nullptr) *num_labels = d->data.num_labels;
    return DECAF_OK;
}

int decaf_dataset_stats(const decaf_dataset_t* d, char** out_report) {
    if (d == nullptr || out_report == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        const auto stats = decaf::dataset_stats(d->data);
        std::ostringstream ss;
        ss.precision(12);
        ss << "num_points=" << d->data.num_points << "\n";
        ss << "num_tokens=" << d->data.num_tokens << "\n";
        ss << "num_labels=" << d->data.num_labels << "\n";
        ss << "avg_tokens_per_doc=" << stats.avg_tokens_per_doc << "\n";
        ss << "avg_tokens_per_label=" << stats.avg_tokens_per_label << "\n";
        ss << "avg_labels_per_doc=" << stats.avg_labels_per_doc << "\n";
        ss << "avg_points_per_label=" << stats.avg_points_per_label << "\n";
        *out_report = dup_string(ss.str());
        return DECAF_OK;
    });
}

int decaf_config_validate(const char* config_kv) {
    return guarded([&] {
        const auto cfg = decaf::TrainConfig::from_kv(parse_kv_text(config_kv));
        cfg.levels();
        decaf::require(cfg.batch_size >= 1, "config: batch_size must be >= 1");
        decaf::require(cfg.dim >= 1, "config: dim must be >= 1");
        decaf::require(cfg.ensemble >= 1, "config: ensemble must be >= 1");
        decaf::require(cfg.dropout_module1 >= 0.0 && cfg.dropout_module1 < 1.0,
                       "config: dropout_module1 out of range");
        decaf::require(cfg.dropout_rest >= 0.0 && cfg.dropout_rest < 1.0, "config: dropout_rest out of range");
        decaf::require(cfg.target_recall >= 0.0 && cfg.target_recall <= 1.0, "config: target_recall out of range");
        return DECAF_OK;
    });
}

int decaf_train(const decaf_dataset_t* train_data, const char* config_kv, const char* workdir, const char* resume,
                decaf_model_t** out, char** out_log) {
    if (train_data == nullptr || out == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        auto cfg = decaf::TrainConfig::from_kv(parse_kv_text(config_kv));
        cfg.validate(train_data->data);
        std::ostringstream log;
        log.precision(4);
        const auto now = [] { return std::chrono::steady_clock::now(); };
        const auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
        const std::string dir = workdir != nullptr ? workdir : "";
        const auto ckpt = [&](const std::string& name) { return dir + "/" + name; };
        if (!dir.empty()) {
            std::filesystem::create_directories(dir);
            // Echo the effective configuration for provenance.
            std::ofstream cfg_out(ckpt("effective.cfg"));
            for (const auto& [k, v] : cfg.to_kv()) cfg_out << k << "=" << v << "\n";
        }

        const std::string resume_stage = resume != nullptr ? resume : "";
        auto handle = std::make_unique<decaf_model_t>();

        decaf::Model base;
        if (resume_stage == "module1" || resume_stage == "module2") {
            if (dir.empty()) throw decaf::DomainError("resume requires a work directory");
            base = decaf::load_model(ckpt(resume_stage + ".ckpt"));
        } else if (!resume_stage.empty()) {
            throw decaf::DomainError("unknown resume stage '" + resume_stage + "' (use module1 or module2)");
        }

        if (resume_stage.empty()) {
            const auto t0 = now();
            base = decaf::train_module1(train_data->data, cfg, decaf::stage_rng_module1(cfg));
            log << "module1_seconds=" << secs(t0, now()) << "\n";
            if (!dir.empty()) {
                base.config_snapshot = cfg.to_kv();
                base.config_snapshot["stage"] = "module1";
                decaf::save_model(base, ckpt("module1.ckpt"));
            }
        }

        for (int i = 0; i < cfg.ensemble; ++i) {
            decaf::Model m = base;
            const decaf::Rng root = decaf::instance_rng(cfg, i);
            decaf::ShortlistCache cache;
            const auto t2 = now();
            if (resume_stage == "module2") {
                // The frozen shortlister determines the cache.
                cache = decaf::build_shortlist_cache(m, train_data->data, m.shortlister.default_beam, cfg.threads);
            } else {
                cache = decaf::train_module2(m, train_data->data, cfg, root.derive(0));
                if (!dir.empty() && i == 0) {
                    m.config_snapshot = cfg.to_kv();
                    m.config_snapshot["stage"] = "module2";
                    decaf::save_model(m, ckpt("module2.ckpt"));
                }
            }
            log << "instance" << i << ".module2_seconds=" << secs(t2, now()) << "\n";
            decaf::init_module3(m, train_data->data, cfg, root.derive(1));
            const auto t4 = now();
            decaf::train_module4(m, train_data->data, cache, cfg, root.derive(2));
            log << "instance" << i << ".module4_seconds=" << secs(t4, now()) << "\n";
            m.config_snapshot = cfg.to_kv();
            m.config_snapshot["stage"] = "module4";
            handle->instances.push_back(std::move(m));
        }
        if (!dir.empty()) decaf::save_models(handle->instances, ckpt("module4.ckpt"));
        if (out_log != nullptr) *out_log = dup_string(log.str());
        *out = handle.release();
        return DECAF_OK;
    });
}

int decaf_vectorize_titles(const char* doc_titles_path, const char* label_titles_path, const char* out_prefix) {
    if (doc_titles_path == nullptr || out_prefix == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        // One shared vocabulary over documents and label titles: tokenize the
        // concatenation, then split the rows back out.
        const std::string prefix(out_prefix);
        auto docs = decaf::tokenize_raw_titles(doc_titles_path);
        std::size_t label_rows = 0;
        if (label_titles_path != nullptr) {
            const auto labels_raw = decaf::read_title_file(label_titles_path);
            label_rows = labels_raw.size();
            const std::string combined = prefix + ".combined.tmp";
            {
                std::ofstream out(combined);
                for (const auto& t : docs.titles) out << t << "\n";
                for (const auto& t : labels_raw) out << t << "\n";
            }
            docs = decaf::tokenize_raw_titles(combined);
            std::filesystem::remove(combined);
        }
        const std::uint64_t vocab = docs.vocab.size();
        decaf::require(vocab > 0, "vectorize: no tokens found");
        const auto tf = decaf::build_tfidf(docs.counts, vocab);
        const std::size_t doc_rows = tf.size() - label_rows;

        decaf::Dataset doc_ds;
        doc_ds.num_points = doc_rows;
        doc_ds.num_tokens = vocab;
        doc_ds.num_labels = label_rows > 0 ? label_rows : 1;
        doc_ds.documents.assign(tf.begin(), tf.begin() + static_cast<std::ptrdiff_t>(doc_rows));
        doc_ds.ground_truth.resize(doc_rows);
        decaf::write_xc_file(doc_ds, prefix + ".docs.txt");

        if (label_rows > 0) {
            decaf::Dataset label_ds;
            label_ds.num_points = label_rows;
            label_ds.num_tokens = vocab;
            label_ds.num_labels = label_rows;
            label_ds.documents.assign(tf.begin() + static_cast<std::ptrdiff_t>(doc_rows), tf.end());
            label_ds.ground_truth.resize(label_rows);
            decaf::write_xc_file(label_ds, prefix + ".labels.txt");
        }
        std::ofstream vout(prefix + ".vocab.txt");
        if (!vout) throw decaf::IoError("cannot write '" + prefix + ".vocab.txt'");
        for (const auto& tok : docs.vocab) vout << tok << "\n";
        return DECAF_OK;
    });
}

int decaf_model_load(const char* path, decaf_model_t** out) {
    if (path == nullptr || out == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        auto handle = std::make_unique<decaf_model_t>();
        handle->instances = decaf::load_models(path);
        *out = handle.release();
        return DECAF_OK;
    });
}

int decaf_model_save(const decaf_model_t* m, const char* path) {
    if (m == nullptr || path == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        decaf::save_models(m->instances, path);
        return DECAF_OK;
    });
}

void decaf_model_free(decaf_model_t* m) { delete m; }

int decaf_model_info(const decaf_model_t* m, char** out_report) {
    if (m == nullptr || out_report == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        std::ostringstream ss;
        const auto& first = m->instances.front();
        ss << "instances=" << m->instances.size() << "\n";
        ss << "dim=" << first.dim << "\n";
        ss << "num_tokens=" << first.num_tokens << "\n";
        ss << "num_labels=" << first.num_labels << "\n";
        ss << "num_clusters=" << first.num_clusters() << "\n";
        ss << "default_beam=" << first.shortlister.default_beam << "\n";
        ss << "classifier_mode=" << decaf::classifier_mode_name(first.classifier_mode) << "\n";
        for (const auto& [k, v] : first.config_snapshot) ss << "config." << k << "=" << v << "\n";
        *out_report = dup_string(ss.str());
        return DECAF_OK;
    });
}

int decaf_predict_file(const decaf_model_t* m, const decaf_dataset_t* input, int top_k, uint32_t beam,
                       int with_counters, int combine, int threads, const char* out_path) {
    if (m == nullptr || input == nullptr || out_path == nullptr)
        return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        decaf::PredictOptions opts;
        opts.top_k = top_k;
        opts.beam = beam;
        opts.combine = combine == 1 ? decaf::EnsembleCombine::rank_sum : decaf::EnsembleCombine::mean;
        const auto preds = decaf::predict_all(m->instances, input->data, opts, threads);
        if (with_counters != 0) {
            std::vector<decaf::OpCounter> counters(input->data.num_points);
            const std::uint32_t eff_beam = beam != 0 ? beam : m->instances.front().shortlister.default_beam;
            for (std::uint64_t i = 0; i < input->data.num_points; ++i)
                counters[i] = decaf::count_ops(m->instances.front(), input->data.documents[i], eff_beam);
            decaf::write_predictions_file(preds, out_path, &counters);
        } else {
            decaf::write_predictions_file(preds, out_path);
        }
        return DECAF_OK;
    });
}

int decaf_evaluate(const char* pred_path, const char* truth_xc_path, const char* train_xc_path,
                   const char* options_kv, char** out_report) {
    if (pred_path == nullptr || truth_xc_path == nullptr || out_report == nullptr)
        return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        const auto opts_map = parse_kv_text(options_kv);
        const auto get = [&](const char* key, const std::string& fallback) {
            const auto it = opts_map.find(key);
            return it == opts_map.end() ? fallback : it->second;
        };

        decaf::ParseOptions popts;
        popts.one_based_tokens = get("one_based", "0") == "1";
        auto preds = decaf::read_predictions_file(pred_path);
        const auto truth = decaf::parse_xc_file(truth_xc_path, popts);
        if (preds.size() != truth.num_points)
            throw decaf::DomainError("prediction file has " + std::to_string(preds.size()) + " rows, truth has " +
                                     std::to_string(truth.num_points));

        std::vector<std::uint64_t> freqs;
        std::uint64_t train_points = 1;
        decaf::Dataset train;
        const bool have_train = train_xc_path != nullptr;
        if (have_train) {
            train = decaf::parse_xc_file(train_xc_path, popts);
            freqs = decaf::dataset_stats(train).label_frequencies;
            train_points = train.num_points;
        }

        std::map<std::string, double> extra;
        if (get("filter_reciprocal", "0") == "1") {
            if (!have_train) throw decaf::DomainError("filter_reciprocal requires the train dataset");
            decaf::ReciprocalFilter filter;
            if (opts_map.contains("test_map") && opts_map.contains("train_map")) {
                filter = decaf::ReciprocalFilter::from_map_files(get("test_map", ""), get("train_map", ""),
                                                                 preds.size(), train.ground_truth);
            } else if (opts_map.contains("label_titles") && opts_map.contains("test_titles") &&
                       opts_map.contains("train_titles")) {
                filter = decaf::ReciprocalFilter::from_titles(decaf::read_title_file(get("test_titles", "")),
                                                              decaf::read_title_file(get("label_titles", "")),
                                                              decaf::read_title_file(get("train_titles", "")),
                                                              train.ground_truth);
            } else {
                // Identity mapping unavailable: skip filtering but say so.
                extra["filter_skipped_no_identity"] = 1.0;
            }
            if (!extra.contains("filter_skipped_no_identity")) {
                const auto stats = decaf::filter_trivial_and_reciprocal(preds, filter);
                extra["filtered_self"] = static_cast<double>(stats.removed_self);
                extra["filtered_reciprocal"] = static_cast<double>(stats.removed_reciprocal);
            }
        }

        decaf::MetricOptions mopts;
        mopts.literal_dcg = get("literal_dcg", "0") == "1";
        const double pa = std::stod(get("propensity_a", "0.55"));
        const double pb = std::stod(get("propensity_b", "1.5"));
        const auto report =
            decaf::evaluate_predictions(preds, truth.ground_truth, truth.num_labels, freqs, train_points, pa, pb,
                                        mopts);
        auto kv = report.to_kv();
        kv.insert(extra.begin(), extra.end());
        std::ostringstream ss;
        ss.precision(12);
        for (const auto& [k, v] : kv) ss << k << "=" << v << "\n";
        *out_report = dup_string(ss.str());
        return DECAF_OK;
    });
}

int decaf_cluster(const decaf_dataset_t* d, uint32_t levels, uint64_t seed, const char* model_path,
                  const char* out_path) {
    if (d == nullptr || out_path == nullptr) return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        decaf::LabelCentroids centroids;
        if (model_path != nullptr) {
            const auto model = decaf::load_model(model_path);
            centroids = decaf::centroids_dense(d->data, model.tokens);
        } else {
            centroids = decaf::centroids_sparse(d->data);
        }
        const auto clustering = decaf::hierarchical_cluster(centroids, levels, decaf::Rng(seed));
        decaf::write_clusters_file(clustering, out_path);
        return DECAF_OK;
    });
}

int decaf_shortlist_eval(const decaf_model_t* m, const decaf_dataset_t* d, const char* beams_csv, int threads,
                         char** out_table) {
    if (m == nullptr || d == nullptr || out_table == nullptr)
        return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        const auto& model = m->instances.front();
        const std::uint32_t k = static_cast<std::uint32_t>(model.num_clusters());
        std::vector<std::uint32_t> beams;
        if (beams_csv != nullptr && beams_csv[0] != '\0') {
            std::stringstream ss(beams_csv);
            std::string tok;
            while (std::getline(ss, tok, ','))
                if (!tok.empty()) beams.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
        } else {
            for (std::uint32_t b = 1; b < k; b *= 2) beams.push_back(b);
            beams.push_back(k);
        }
        const auto embeddings = decaf::embed_all_documents(model, d->data, threads);
        const auto curve = decaf::recall_curve(model.shortlister, d->data, embeddings);

        // Mean shortlist length per beam from the actual cluster sizes.
        std::ostringstream out;
        out << "beam\trecall\tmean_shortlist_len\n";
        out.precision(6);
        for (const auto b : beams) {
            decaf::require(b >= 1 && b <= k, "shortlist-eval: beam out of range");
            double total_len = 0.0;
            for (std::uint64_t i = 0; i < d->data.num_points; ++i) {
                const auto sl =
                    decaf::shortlist(model.shortlister, std::span<const float>(embeddings.row(i)), b);
                total_len += static_cast<double>(sl.label_ids.size());
            }
            out << b << "\t" << curve.recall(b) << "\t" << total_len / static_cast<double>(d->data.num_points)
                << "\n";
        }
        *out_table = dup_string(out.str());
        return DECAF_OK;
    });
}

int decaf_diagnose(const decaf_model_t* m, const decaf_dataset_t* d, uint32_t beam, int threads,
                   char** out_report) {
    if (m == nullptr || d == nullptr || out_report == nullptr)
        return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        const auto& model = m->instances.front();
        const std::uint32_t b = beam != 0 ? beam : model.shortlister.default_beam;
        const auto diag = decaf::theorem_diagnostics(model, d->data, b, threads);
        std::ostringstream ss;
        ss.precision(12);
        for (const auto& [k, v] : diag.to_kv()) ss << k << "=" << v << "\n";
        *out_report = dup_string(ss.str());
        return DECAF_OK;
    });
}

int decaf_rescore_bow(const char* pred_path, const decaf_dataset_t* docs, double alpha, const char* out_path) {
    if (pred_path == nullptr || docs == nullptr || out_path == nullptr)
        return set_error(DECAF_ERR_INVALID_ARG, "null argument");
    return guarded([&] {
        if (!docs->data.has_label_texts()) throw decaf::DomainError("rescore requires label texts");
        auto preds = decaf::read_predictions_file(pred_path);
        if (preds.size() != docs->data.num_points)
            throw decaf::DomainError("prediction file row count does not match the dataset");
        decaf::bow_metadata_rescore(preds, docs->data, docs->data.label_texts, alpha);
        decaf::write_predictions_file(preds, out_path);
        return DECAF_OK;
    });
}

} // extern "C"
