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

// decaf command-line interface. Everything goes through the C API; this file
// only parses arguments, moves strings around, and maps status codes to exit
// codes (0 ok, 1 domain/data error, 2 usage error).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "decaf/decaf_c.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct DatasetHandle {
    decaf_dataset_t* ptr = nullptr;
    ~DatasetHandle() { decaf_dataset_free(ptr); }
};

struct ModelHandle {
    decaf_model_t* ptr = nullptr;
    ~ModelHandle() { decaf_model_free(ptr); }
};

struct OwnedString {
    char* ptr = nullptr;
    ~OwnedString() { decaf_string_free(ptr); }
    std::string str() const { return ptr != nullptr ? std::string(ptr) : std::string(); }
};

[[noreturn]] void fail(int code, const std::string& msg) {
    std::cerr << "decaf: " << msg << "\n";
    std::exit(code);
}

// Missing files and bad arguments are usage errors (2); malformed data and
// numeric failures are domain errors (1).
void check(int status, const std::string& what) {
    if (status == DECAF_OK) return;
    const int exit_code =
        (status == DECAF_ERR_INVALID_ARG || status == DECAF_ERR_IO) ? kExitUsage : kExitDomain;
    fail(exit_code, what + ": " + decaf_last_error());
}

std::string read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(kExitUsage, "cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// FNV-1a over the effective config, logged for provenance.
std::string config_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path);
    if (!out) fail(kExitDomain, "cannot write '" + out_path + "'");
    out << text;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"decaf: label-text-aware extreme multi-label classifier"};
    app.require_subcommand(1);
    app.failure_message([](const CLI::App* a, const CLI::Error& e) {
        return std::string("decaf: ") + e.what() + "\nRun with --help for usage.\n";
    });

    // ---- train ----
    auto* train = app.add_subcommand("train", "run the four-module training pipeline");
    std::string tr_data, tr_label_text, tr_config, tr_out, tr_workdir, tr_resume, tr_ablation;
    std::vector<std::string> tr_overrides;
    std::uint64_t tr_seed = 0;
    bool tr_has_seed = false;
    int tr_threads = -1;
    train->add_option("--data", tr_data, "training set (sparse format; or 'data=' in the config)");
    train->add_option("--label-text", tr_label_text, "label text file (or 'label_text=' in the config)");
    train->add_option("--config", tr_config, "key=value config file");
    train->add_option("--set", tr_overrides, "config override key=value (repeatable)");
    train->add_option("--seed", tr_seed, "master seed")->each([&](const std::string&) { tr_has_seed = true; });
    train->add_option("--threads", tr_threads, "worker threads (0 = all cores)");
    train->add_option("--ablation", tr_ablation,
                      "one of: z1-only, z2-only, no-init, lite, fixed-embeddings");
    train->add_option("--out", tr_out, "output model file (or 'out=' in the config)");
    train->add_option("--workdir", tr_workdir, "directory for per-module checkpoints");
    train->add_option("--resume", tr_resume, "resume from checkpoint stage (module1|module2)");
    bool tr_one_based = false;
    train->add_flag("--one-based", tr_one_based, "token ids in input files are one-based");

    // ---- predict ----
    auto* predict = app.add_subcommand("predict", "rank labels for each input document");
    std::string pr_model, pr_input, pr_output;
    int pr_topk = 5, pr_threads = 0;
    std::uint32_t pr_beam = 0;
    bool pr_counters = false;
    std::string pr_combine = "mean";
    predict->add_option("--model", pr_model)->required();
    predict->add_option("--input", pr_input, "documents (sparse format)")->required();
    predict->add_option("--topk", pr_topk);
    predict->add_option("--beam", pr_beam, "clusters to expand (0 = model default)");
    predict->add_option("--output", pr_output)->required();
    predict->add_option("--threads", pr_threads);
    predict->add_option("--combine", pr_combine, "ensemble combination: mean|rank-sum");
    predict->add_flag("--counters", pr_counters, "append per-document op counts");
    bool pr_one_based = false;
    predict->add_flag("--one-based", pr_one_based, "token ids in input files are one-based");

    // ---- evaluate ----
    auto* evaluate = app.add_subcommand("evaluate", "score a prediction file");
    std::string ev_pred, ev_truth, ev_train, ev_report, ev_propensity;
    std::string ev_label_titles, ev_test_titles, ev_train_titles, ev_test_map, ev_train_map;
    bool ev_filter = false, ev_literal = false;
    evaluate->add_option("--pred", ev_pred)->required();
    evaluate->add_option("--truth", ev_truth, "test set (sparse format)")->required();
    evaluate->add_option("--train", ev_train, "train set, for propensities/quantiles/filtering");
    evaluate->add_option("--propensity", ev_propensity, "A,B propensity parameters");
    evaluate->add_option("--report", ev_report, "output key=value file (default stdout)");
    evaluate->add_flag("--filter-reciprocal", ev_filter);
    evaluate->add_flag("--literal-dcg", ev_literal, "audit-mode DCG normalization");
    evaluate->add_option("--label-titles", ev_label_titles);
    evaluate->add_option("--test-titles", ev_test_titles);
    evaluate->add_option("--train-titles", ev_train_titles);
    evaluate->add_option("--test-map", ev_test_map, "doc->label identity map file");
    evaluate->add_option("--train-map", ev_train_map);
    bool ev_one_based = false;
    evaluate->add_flag("--one-based", ev_one_based, "token ids in input files are one-based");

    // ---- cluster ----
    auto* cluster = app.add_subcommand("cluster", "balanced hierarchical label clustering");
    std::string cl_data, cl_label_text, cl_model, cl_out;
    std::uint32_t cl_levels = 0;
    std::uint64_t cl_seed = 42;
    cluster->add_option("--data", cl_data)->required();
    cluster->add_option("--label-text", cl_label_text);
    cluster->add_option("--levels", cl_levels, "tree depth; 2^levels clusters")->required();
    cluster->add_option("--seed", cl_seed);
    cluster->add_option("--model", cl_model, "use dense centroids under this model's embeddings");
    cluster->add_option("--out", cl_out)->required();
    bool cl_one_based = false;
    cluster->add_flag("--one-based", cl_one_based, "token ids in input files are one-based");

    // ---- shortlist-eval ----
    auto* sl_eval = app.add_subcommand("shortlist-eval", "beam/recall/shortlist-length table");
    std::string se_model, se_data, se_label_text, se_beams, se_out;
    int se_threads = 0;
    sl_eval->add_option("--model", se_model)->required();
    sl_eval->add_option("--data", se_data)->required();
    sl_eval->add_option("--label-text", se_label_text);
    sl_eval->add_option("--beams", se_beams, "comma-separated beams (default: doubling sweep)");
    sl_eval->add_option("--threads", se_threads);
    sl_eval->add_option("--out", se_out, "output file (default stdout)");
    bool se_one_based = false;
    sl_eval->add_flag("--one-based", se_one_based, "token ids in input files are one-based");

    // ---- rescore-bow ----
    auto* rescore = app.add_subcommand("rescore-bow", "mix prediction scores with raw text similarity");
    std::string rb_pred, rb_data, rb_label_text, rb_out;
    double rb_alpha = 1.0;
    rescore->add_option("--pred", rb_pred)->required();
    rescore->add_option("--data", rb_data, "documents (sparse format)")->required();
    rescore->add_option("--label-text", rb_label_text)->required();
    rescore->add_option("--alpha", rb_alpha, "weight of the model score in [0,1]")->required();
    rescore->add_option("--out", rb_out)->required();
    bool rb_one_based = false;
    rescore->add_flag("--one-based", rb_one_based, "token ids in input files are one-based");

    // ---- diagnose ----
    auto* diagnose = app.add_subcommand("diagnose", "approximate-likelihood diagnostics");
    std::string dg_model, dg_data, dg_label_text, dg_out;
    std::uint32_t dg_beam = 0;
    int dg_threads = 0;
    diagnose->add_option("--model", dg_model)->required();
    diagnose->add_option("--data", dg_data)->required();
    diagnose->add_option("--label-text", dg_label_text);
    diagnose->add_option("--beam", dg_beam, "0 = model default");
    diagnose->add_option("--threads", dg_threads);
    diagnose->add_option("--out", dg_out, "output file (default stdout)");
    bool dg_one_based = false;
    diagnose->add_flag("--one-based", dg_one_based, "token ids in input files are one-based");

    // ---- vectorize ----
    auto* vectorize = app.add_subcommand("vectorize", "tokenize raw titles into sparse TF-IDF files");
    std::string vz_docs, vz_labels, vz_prefix;
    vectorize->add_option("--doc-titles", vz_docs, "one title per line")->required();
    vectorize->add_option("--label-titles", vz_labels, "one label title per line (shares the vocabulary)");
    vectorize->add_option("--out-prefix", vz_prefix)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            std::cout << app.help();
            return kExitOk;
        }
        std::cerr << "decaf: " << e.what() << "\n";
        return kExitUsage;
    }

    if (train->parsed()) {
        // Path-like keys may live in the config file; flags override them. The
        // remaining lines go to the trainer as-is.
        std::string config_text;
        if (!tr_config.empty()) {
            std::istringstream in(read_config_file(tr_config));
            std::string line;
            while (std::getline(in, line)) {
                const auto strip = [](std::string s) {
                    const auto b = s.find_first_not_of(" \t\r");
                    if (b == std::string::npos) return std::string();
                    const auto e = s.find_last_not_of(" \t\r");
                    return s.substr(b, e - b + 1);
                };
                const auto eq = line.find('=');
                const std::string key = eq == std::string::npos ? "" : strip(line.substr(0, eq));
                const std::string value = eq == std::string::npos ? "" : strip(line.substr(eq + 1));
                if (key == "data") {
                    if (tr_data.empty()) tr_data = value;
                } else if (key == "label_text") {
                    if (tr_label_text.empty()) tr_label_text = value;
                } else if (key == "out") {
                    if (tr_out.empty()) tr_out = value;
                } else if (key == "workdir") {
                    if (tr_workdir.empty()) tr_workdir = value;
                } else {
                    config_text += line + "\n";
                }
            }
        }
        // Flags override the config file.
        for (const auto& kv : tr_overrides) config_text += kv + "\n";
        if (tr_has_seed) config_text += "seed=" + std::to_string(tr_seed) + "\n";
        if (tr_threads >= 0) config_text += "threads=" + std::to_string(tr_threads) + "\n";
        if (!tr_ablation.empty()) {
            if (tr_ablation == "z1-only") config_text += "classifier_mode=z1-only\n";
            else if (tr_ablation == "z2-only") config_text += "classifier_mode=z2-only\n";
            else if (tr_ablation == "no-init") config_text += "random_refinement_init=1\n";
            else if (tr_ablation == "lite" || tr_ablation == "fixed-embeddings")
                config_text += "freeze_tokens_after_module1=1\n";
            else fail(kExitUsage, "unknown ablation '" + tr_ablation + "'");
        }
        if (tr_data.empty() || tr_label_text.empty() || tr_out.empty())
            fail(kExitUsage, "train needs --data, --label-text, and --out (flags or config keys)");
        if (decaf_config_validate(config_text.c_str()) != DECAF_OK)
            fail(kExitUsage, std::string("invalid config: ") + decaf_last_error());

        DatasetHandle data;
        check(decaf_dataset_load(tr_data.c_str(), tr_label_text.c_str(), nullptr, tr_one_based ? 1 : 0, &data.ptr),
              "load data");
        std::cerr << "decaf train: config hash " << config_hash(config_text) << "\n";
        const auto start = std::chrono::steady_clock::now();
        ModelHandle model;
        OwnedString timings;
        check(decaf_train(data.ptr, config_text.c_str(), tr_workdir.empty() ? nullptr : tr_workdir.c_str(),
                          tr_resume.empty() ? nullptr : tr_resume.c_str(), &model.ptr, &timings.ptr),
              "train");
        check(decaf_model_save(model.ptr, tr_out.c_str()), "save model");
        OwnedString info;
        check(decaf_model_info(model.ptr, &info.ptr), "model info");
        std::cerr << info.str() << timings.str();
        std::cerr << "decaf train: finished in " << seconds_since(start) << " s\n";
        return kExitOk;
    }

    if (predict->parsed()) {
        ModelHandle model;
        check(decaf_model_load(pr_model.c_str(), &model.ptr), "load model");
        DatasetHandle data;
        check(decaf_dataset_load(pr_input.c_str(), nullptr, nullptr, pr_one_based ? 1 : 0, &data.ptr),
              "load input");
        const int combine = pr_combine == "rank-sum" ? 1 : 0;
        if (pr_combine != "mean" && pr_combine != "rank-sum") fail(kExitUsage, "unknown --combine value");
        const auto start = std::chrono::steady_clock::now();
        check(decaf_predict_file(model.ptr, data.ptr, pr_topk, pr_beam, pr_counters ? 1 : 0, combine, pr_threads,
                                 pr_output.c_str()),
              "predict");
        std::cerr << "decaf predict: finished in " << seconds_since(start) << " s\n";
        return kExitOk;
    }

    if (evaluate->parsed()) {
        std::string options;
        if (!ev_propensity.empty()) {
            const auto comma = ev_propensity.find(',');
            if (comma == std::string::npos) fail(kExitUsage, "--propensity expects 'A,B'");
            options += "propensity_a=" + ev_propensity.substr(0, comma) + "\n";
            options += "propensity_b=" + ev_propensity.substr(comma + 1) + "\n";
        }
        if (ev_filter) options += "filter_reciprocal=1\n";
        if (ev_one_based) options += "one_based=1\n";
        if (ev_literal) options += "literal_dcg=1\n";
        if (!ev_label_titles.empty()) options += "label_titles=" + ev_label_titles + "\n";
        if (!ev_test_titles.empty()) options += "test_titles=" + ev_test_titles + "\n";
        if (!ev_train_titles.empty()) options += "train_titles=" + ev_train_titles + "\n";
        if (!ev_test_map.empty()) options += "test_map=" + ev_test_map + "\n";
        if (!ev_train_map.empty()) options += "train_map=" + ev_train_map + "\n";
        OwnedString report;
        check(decaf_evaluate(ev_pred.c_str(), ev_truth.c_str(), ev_train.empty() ? nullptr : ev_train.c_str(),
                             options.c_str(), &report.ptr),
              "evaluate");
        emit(report.str(), ev_report);
        return kExitOk;
    }

    if (cluster->parsed()) {
        DatasetHandle data;
        check(decaf_dataset_load(cl_data.c_str(), cl_label_text.empty() ? nullptr : cl_label_text.c_str(), nullptr,
                                 cl_one_based ? 1 : 0, &data.ptr),
              "load data");
        check(decaf_cluster(data.ptr, cl_levels, cl_seed, cl_model.empty() ? nullptr : cl_model.c_str(),
                            cl_out.c_str()),
              "cluster");
        return kExitOk;
    }

    if (sl_eval->parsed()) {
        ModelHandle model;
        check(decaf_model_load(se_model.c_str(), &model.ptr), "load model");
        DatasetHandle data;
        check(decaf_dataset_load(se_data.c_str(), se_label_text.empty() ? nullptr : se_label_text.c_str(), nullptr,
                                 se_one_based ? 1 : 0, &data.ptr),
              "load data");
        OwnedString table;
        check(decaf_shortlist_eval(model.ptr, data.ptr, se_beams.c_str(), se_threads, &table.ptr),
              "shortlist-eval");
        emit(table.str(), se_out);
        return kExitOk;
    }

    if (rescore->parsed()) {
        DatasetHandle data;
        check(decaf_dataset_load(rb_data.c_str(), rb_label_text.c_str(), nullptr, rb_one_based ? 1 : 0, &data.ptr),
              "load data");
        check(decaf_rescore_bow(rb_pred.c_str(), data.ptr, rb_alpha, rb_out.c_str()), "rescore-bow");
        return kExitOk;
    }

    if (diagnose->parsed()) {
        ModelHandle model;
        check(decaf_model_load(dg_model.c_str(), &model.ptr), "load model");
        DatasetHandle data;
        check(decaf_dataset_load(dg_data.c_str(), dg_label_text.empty() ? nullptr : dg_label_text.c_str(), nullptr,
                                 dg_one_based ? 1 : 0, &data.ptr),
              "load data");
        OwnedString report;
        check(decaf_diagnose(model.ptr, data.ptr, dg_beam, dg_threads, &report.ptr), "diagnose");
        emit(report.str(), dg_out);
        return kExitOk;
    }

    if (vectorize->parsed()) {
        check(decaf_vectorize_titles(vz_docs.c_str(), vz_labels.empty() ? nullptr : vz_labels.c_str(),
                                     vz_prefix.c_str()),
              "vectorize");
        return kExitOk;
    }

    return kExitUsage;
}
