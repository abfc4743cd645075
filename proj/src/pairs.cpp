#include "flags/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flags/error.hpp"

namespace flags {

void validate_feature_table(const FeatureTable& table) {
    const std::size_t n = table.sample_ids.size();
    if (table.class_ids.size() != n || (n > 0 && table.features.rows() != n)) {
        throw IntegrityError("feature table: column lengths disagree");
    }
    std::vector<std::size_t> ids = table.sample_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw IntegrityError("feature table: duplicate sample id");
    }
    if (!table.features.all_finite()) {
        throw IntegrityError("feature table: non-finite feature");
    }
}

FeatureTable compute_features(const EncoderParams& encoder, const SyntheticDataset& data,
                              std::string provenance) {
    if (encoder.input_dim() != data.input_dim()) {
        throw ConfigError("compute_features: encoder expects input_dim " +
                          std::to_string(encoder.input_dim()) + ", dataset has " +
                          std::to_string(data.input_dim()));
    }
    FeatureTable t;
    t.provenance = std::move(provenance);
    for (const Sample& s : data.samples) {
        t.sample_ids.push_back(s.id);
        t.class_ids.push_back(s.class_id);
    }
    t.features = encode(encoder, data.all_inputs());
    return t;
}

namespace {

std::size_t row_of(const FeatureTable& table, std::size_t id) {
    // Tables produced by compute_features are indexed by id; fall back to a
    // scan for anything else.
    if (id < table.size() && table.sample_ids[id] == id) {
        return id;
    }
    const auto it = std::find(table.sample_ids.begin(), table.sample_ids.end(), id);
    if (it == table.sample_ids.end()) {
        throw IntegrityError("feature table: unknown sample id " + std::to_string(id));
    }
    return static_cast<std::size_t>(it - table.sample_ids.begin());
}

double checked_norm(const FeatureTable& table, std::size_t row) {
    const double n = norm(table.features.row(row));
    if (!(n > 0.0)) {
        throw DegenerateSimilarityError("cosine similarity undefined: sample " +
                                        std::to_string(table.sample_ids[row]) +
                                        " has a zero-norm feature");
    }
    return n;
}

}  // namespace

std::vector<RankedSample> rank_within_class(const FeatureTable& table, std::size_t query_id) {
    const std::size_t qrow = row_of(table, query_id);
    const std::size_t cls = table.class_ids[qrow];
    std::vector<std::size_t> members;
    for (std::size_t r = 0; r < table.size(); ++r) {
        if (table.class_ids[r] == cls && r != qrow) {
            members.push_back(r);
        }
    }
    if (members.empty()) {
        throw InsufficientClassSizeError("rank_within_class: class " + std::to_string(cls) +
                                         " has fewer than 2 members");
    }
    const double qn = checked_norm(table, qrow);
    const auto q = table.features.row(qrow);
    std::vector<RankedSample> out;
    out.reserve(members.size());
    for (std::size_t r : members) {
        const double n = checked_norm(table, r);
        out.push_back({table.sample_ids[r], dot(q, table.features.row(r)) / (qn * n)});
    }
    std::sort(out.begin(), out.end(), [](const RankedSample& a, const RankedSample& b) {
        if (a.similarity != b.similarity) {
            return a.similarity > b.similarity;
        }
        return a.id < b.id;
    });
    return out;
}

PairSelection select_pairs(std::span<const RankedSample> ranked, LocalPairPolicy policy,
                           std::size_t class_id) {
    const std::size_t n = ranked.size();
    if (n < 4) {
        throw InsufficientClassSizeError("select_pairs: class " + std::to_string(class_id) +
                                         " has " + std::to_string(n) +
                                         " candidates per query, at least 4 are required");
    }
    PairSelection sel;
    sel.global = {ranked[0].id, ranked[1].id};
    switch (policy) {
        case LocalPairPolicy::median: {
            std::size_t mid = (n - 2) / 2;
            if (mid < 2) {
                mid = 2;
            }
            sel.local = {ranked[mid].id, ranked[mid + 1].id};
            break;
        }
    }
    return sel;
}

const ManifestEntry& PairManifest::at(std::size_t id) const {
    if (id < entries.size() && entries[id].id == id) {
        return entries[id];
    }
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [id](const ManifestEntry& e) { return e.id == id; });
    if (it == entries.end()) {
        throw IntegrityError("manifest: no entry for sample " + std::to_string(id));
    }
    return *it;
}

PairManifest build_manifest(const FeatureTable& table, LocalPairPolicy policy) {
    validate_feature_table(table);
    std::map<std::size_t, std::size_t> class_sizes;
    for (std::size_t c : table.class_ids) {
        ++class_sizes[c];
    }
    for (const auto& [cls, count] : class_sizes) {
        if (count < 5) {
            throw InsufficientClassSizeError("build_manifest: class " + std::to_string(cls) +
                                             " has " + std::to_string(count) +
                                             " samples, at least 5 are required");
        }
    }
    std::vector<std::size_t> order(table.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&table](std::size_t a, std::size_t b) {
        return table.sample_ids[a] < table.sample_ids[b];
    });
    PairManifest m;
    m.entries.reserve(table.size());
    for (std::size_t r : order) {
        const std::size_t id = table.sample_ids[r];
        const auto ranked = rank_within_class(table, id);
        const PairSelection sel = select_pairs(ranked, policy, table.class_ids[r]);
        m.entries.push_back({id, table.class_ids[r], sel.global, sel.local});
    }
    return m;
}

void validate_manifest(const PairManifest& manifest, const SyntheticDataset& data) {
    if (manifest.entries.size() != data.samples.size()) {
        throw IntegrityError("manifest: " + std::to_string(manifest.entries.size()) +
                             " entries for " + std::to_string(data.samples.size()) + " samples");
    }
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const ManifestEntry& e = manifest.entries[i];
        if (e.id != i) {
            throw IntegrityError("manifest: entry " + std::to_string(i) + " has id " +
                                 std::to_string(e.id) + "; entries must be in id order");
        }
        if (e.class_id != data.samples[i].class_id) {
            throw IntegrityError("manifest: class of sample " + std::to_string(i) +
                                 " disagrees with the dataset");
        }
        for (std::size_t ref : {e.global[0], e.global[1], e.local[0], e.local[1]}) {
            if (ref >= data.samples.size()) {
                throw IntegrityError("manifest: sample " + std::to_string(i) +
                                     " references unknown id " + std::to_string(ref));
            }
            if (ref == e.id) {
                throw IntegrityError("manifest: sample " + std::to_string(i) + " pairs with itself");
            }
            if (data.samples[ref].class_id != e.class_id) {
                throw IntegrityError("manifest: sample " + std::to_string(i) +
                                     " pairs across classes with " + std::to_string(ref));
            }
        }
    }
}

}  // namespace flags
