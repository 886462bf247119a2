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

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "decaf/common.hpp"
#include "decaf/model.hpp"

namespace decaf {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'E', 'C', 'A', 'F', 'M', 'D', '1'};
constexpr std::uint32_t kFormatVersion = 1;

struct ArrayWriter {
    std::vector<char> payload;
    json directory = json::array();

    template <typename V>
    void add(const std::string& name, const char* dtype, const V& values) {
        json entry;
        entry["name"] = name;
        entry["dtype"] = dtype;
        entry["offset"] = payload.size();
        entry["count"] = values.size();
        directory.push_back(entry);
        const std::size_t bytes = values.size() * sizeof(typename V::value_type);
        const std::size_t at = payload.size();
        payload.resize(at + bytes);
        if (bytes > 0) std::memcpy(payload.data() + at, values.data(), bytes);
    }
};

struct ArrayReader {
    const std::vector<char>& payload;
    std::map<std::string, std::pair<std::size_t, std::size_t>> index; // name -> (offset, count)

    ArrayReader(const std::vector<char>& p, const json& directory) : payload(p) {
        for (const auto& e : directory)
            index[e.at("name").get<std::string>()] = {e.at("offset").get<std::size_t>(),
                                                      e.at("count").get<std::size_t>()};
    }

    template <typename V>
    void read(const std::string& name, V& out) const {
        const auto it = index.find(name);
        if (it == index.end()) throw ParseError("model file: missing array '" + name + "'");
        const auto [offset, count] = it->second;
        const std::size_t bytes = count * sizeof(typename V::value_type);
        if (offset + bytes > payload.size()) throw ParseError("model file: truncated array '" + name + "'");
        out.resize(count);
        if (bytes > 0) std::memcpy(out.data(), payload.data() + offset, bytes);
    }
};

void add_matrix(ArrayWriter& w, const std::string& name, const DenseMatrix& m) { w.add(name, "f32", m.data()); }

void read_matrix(const ArrayReader& r, const std::string& name, std::size_t rows, std::size_t cols,
                 DenseMatrix& out) {
    out = DenseMatrix(rows, cols);
    std::vector<float> flat;
    r.read(name, flat);
    if (flat.size() != rows * cols) throw ParseError("model file: array '" + name + "' has wrong shape");
    out.data() = std::move(flat);
}

void add_sparse_rows(ArrayWriter& w, const std::string& prefix, const std::vector<SparseVector>& rows) {
    std::vector<std::uint64_t> indptr(rows.size() + 1, 0);
    std::vector<std::uint32_t> ids;
    std::vector<float> weights;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        indptr[i + 1] = indptr[i] + rows[i].nnz();
        for (const auto& e : rows[i]) {
            ids.push_back(e.id);
            weights.push_back(e.weight);
        }
    }
    w.add(prefix + ".indptr", "u64", indptr);
    w.add(prefix + ".ids", "u32", ids);
    w.add(prefix + ".weights", "f32", weights);
}

std::vector<SparseVector> read_sparse_rows(const ArrayReader& r, const std::string& prefix, std::size_t count) {
    std::vector<std::uint64_t> indptr;
    std::vector<std::uint32_t> ids;
    std::vector<float> weights;
    r.read(prefix + ".indptr", indptr);
    r.read(prefix + ".ids", ids);
    r.read(prefix + ".weights", weights);
    if (indptr.size() != count + 1 || ids.size() != weights.size() || indptr.back() != ids.size())
        throw ParseError("model file: inconsistent sparse arrays '" + prefix + "'");
    std::vector<SparseVector> rows(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::uint64_t k = indptr[i]; k < indptr[i + 1]; ++k) rows[i].push_back(ids[k], weights[k]);
    }
    return rows;
}

json instance_manifest(const Model& m, ArrayWriter& w, std::size_t idx) {
    const std::string p = "i" + std::to_string(idx) + ".";
    json inst;
    inst["dim"] = m.dim;
    inst["num_tokens"] = m.num_tokens;
    inst["num_labels"] = m.num_labels;
    inst["num_clusters"] = m.num_clusters();
    inst["levels"] = m.shortlister.clustering.levels;
    inst["default_beam"] = m.shortlister.default_beam;
    inst["classifier_mode"] = classifier_mode_name(m.classifier_mode);
    inst["config"] = m.config_snapshot;

    add_matrix(w, p + "tokens", m.tokens.table);
    add_matrix(w, p + "doc.residual", m.doc_block.residual);
    w.add(p + "doc.alpha", "f32", m.doc_block.alpha);
    w.add(p + "doc.beta", "f32", m.doc_block.beta);
    add_matrix(w, p + "label.residual", m.label_block.residual);
    w.add(p + "label.alpha", "f32", m.label_block.alpha);
    w.add(p + "label.beta", "f32", m.label_block.beta);
    w.add(p + "gates.alpha", "f32", m.classifier_gates.alpha);
    w.add(p + "gates.beta", "f32", m.classifier_gates.beta);
    add_matrix(w, p + "refinement", m.refinement);
    w.add(p + "meta_gates.alpha", "f32", m.meta_gates.alpha);
    w.add(p + "meta_gates.beta", "f32", m.meta_gates.beta);
    add_matrix(w, p + "meta_refinement", m.meta_refinement);
    add_matrix(w, p + "shortlister", m.shortlister.cluster_classifiers);

    std::vector<std::uint64_t> cluster_indptr(m.num_clusters() + 1, 0);
    std::vector<std::uint32_t> cluster_labels;
    for (std::size_t c = 0; c < m.num_clusters(); ++c) {
        const auto& members = m.shortlister.clustering.clusters[c];
        cluster_indptr[c + 1] = cluster_indptr[c] + members.size();
        cluster_labels.insert(cluster_labels.end(), members.begin(), members.end());
    }
    w.add(p + "clusters.indptr", "u64", cluster_indptr);
    w.add(p + "clusters.labels", "u32", cluster_labels);
    add_sparse_rows(w, p + "label_texts", m.label_texts);
    return inst;
}

Model read_instance(const json& inst, const ArrayReader& r, std::size_t idx) {
    const std::string p = "i" + std::to_string(idx) + ".";
    Model m;
    m.dim = inst.at("dim").get<std::size_t>();
    m.num_tokens = inst.at("num_tokens").get<std::uint64_t>();
    m.num_labels = inst.at("num_labels").get<std::uint64_t>();
    const auto k = inst.at("num_clusters").get<std::size_t>();
    m.classifier_mode = classifier_mode_from_name(inst.at("classifier_mode").get<std::string>());
    if (inst.contains("config"))
        m.config_snapshot = inst.at("config").get<std::map<std::string, std::string>>();

    read_matrix(r, p + "tokens", m.num_tokens, m.dim, m.tokens.table);
    read_matrix(r, p + "doc.residual", m.dim, m.dim, m.doc_block.residual);
    r.read(p + "doc.alpha", m.doc_block.alpha);
    r.read(p + "doc.beta", m.doc_block.beta);
    read_matrix(r, p + "label.residual", m.dim, m.dim, m.label_block.residual);
    r.read(p + "label.alpha", m.label_block.alpha);
    r.read(p + "label.beta", m.label_block.beta);
    r.read(p + "gates.alpha", m.classifier_gates.alpha);
    r.read(p + "gates.beta", m.classifier_gates.beta);
    read_matrix(r, p + "refinement", m.num_labels, m.dim, m.refinement);
    r.read(p + "meta_gates.alpha", m.meta_gates.alpha);
    r.read(p + "meta_gates.beta", m.meta_gates.beta);
    read_matrix(r, p + "meta_refinement", k, m.dim, m.meta_refinement);
    read_matrix(r, p + "shortlister", k, m.dim, m.shortlister.cluster_classifiers);
    m.shortlister.clustering.levels = inst.at("levels").get<std::uint32_t>();
    m.shortlister.default_beam = inst.at("default_beam").get<std::uint32_t>();

    std::vector<std::uint64_t> cluster_indptr;
    std::vector<std::uint32_t> cluster_labels;
    r.read(p + "clusters.indptr", cluster_indptr);
    r.read(p + "clusters.labels", cluster_labels);
    if (cluster_indptr.size() != k + 1 || cluster_indptr.back() != cluster_labels.size())
        throw ParseError("model file: inconsistent cluster arrays");
    m.shortlister.clustering.clusters.resize(k);
    for (std::size_t c = 0; c < k; ++c)
        m.shortlister.clustering.clusters[c].assign(cluster_labels.begin() + cluster_indptr[c],
                                                    cluster_labels.begin() + cluster_indptr[c + 1]);
    m.label_texts = read_sparse_rows(r, p + "label_texts", m.num_labels);

    if (m.doc_block.alpha.size() != m.dim || m.label_block.alpha.size() != m.dim ||
        m.classifier_gates.alpha.size() != m.dim || m.meta_gates.alpha.size() != m.dim)
        throw ParseError("model file: inconsistent dimensions");
    return m;
}

} // namespace

const char* classifier_mode_name(ClassifierMode m) {
    switch (m) {
        case ClassifierMode::combined: return "combined";
        case ClassifierMode::z1_only: return "z1-only";
        case ClassifierMode::z2_only: return "z2-only";
    }
    return "combined";
}

ClassifierMode classifier_mode_from_name(const std::string& name) {
    if (name == "combined") return ClassifierMode::combined;
    if (name == "z1-only") return ClassifierMode::z1_only;
    if (name == "z2-only") return ClassifierMode::z2_only;
    throw ParseError("unknown classifier mode '" + name + "'");
}

void save_models(const std::vector<Model>& instances, const std::string& path) {
    require(!instances.empty(), "save_models: no instances");
    ArrayWriter w;
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["instances"] = json::array();
    for (std::size_t i = 0; i < instances.size(); ++i)
        manifest["instances"].push_back(instance_manifest(instances[i], w, i));
    manifest["arrays"] = w.directory;

    const std::string manifest_str = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t mlen = manifest_str.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    out.write(w.payload.data(), static_cast<std::streamsize>(w.payload.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

std::vector<Model> load_models(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError(path + ": not a model file (bad magic)");
    std::uint64_t mlen = 0;
    if (!in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen))) throw ParseError(path + ": truncated manifest length");
    std::string manifest_str(mlen, '\0');
    if (!in.read(manifest_str.data(), static_cast<std::streamsize>(mlen)))
        throw ParseError(path + ": truncated manifest");
    json manifest;
    try {
        manifest = json::parse(manifest_str);
    } catch (const std::exception& e) {
        throw ParseError(path + ": bad manifest: " + e.what());
    }
    if (manifest.at("format_version").get<std::uint32_t>() != kFormatVersion)
        throw ParseError(path + ": unsupported format version");

    std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ArrayReader reader(payload, manifest.at("arrays"));

    std::vector<Model> models;
    const auto& insts = manifest.at("instances");
    models.reserve(insts.size());
    for (std::size_t i = 0; i < insts.size(); ++i) models.push_back(read_instance(insts[i], reader, i));
    return models;
}

Model load_model(const std::string& path) {
    auto models = load_models(path);
    return std::move(models.front());
}

} // namespace decaf
