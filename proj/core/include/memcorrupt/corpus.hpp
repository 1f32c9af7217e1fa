// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/error.hpp"
#include "memcorrupt/ids.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace memcorrupt::corpus {

class CorpusError : public Error {
public:
    using Error::Error;
};
class FileNotFound : public CorpusError {
public:
    using CorpusError::CorpusError;
};
class SchemaMismatch : public CorpusError {
public:
    using CorpusError::CorpusError;
};
class EmptyDataset : public CorpusError {
public:
    using CorpusError::CorpusError;
};
class TooFewUsers : public CorpusError {
public:
    using CorpusError::CorpusError;
};

struct Interaction {
    UserId user;
    ItemId item;
    std::int64_t timestamp = 0;
    double value = 1.0;

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Implicit-feedback records. Users and items are exactly those that appear
/// in at least one record; (user, item, timestamp) triples are unique.
class InteractionMatrix {
public:
    InteractionMatrix() = default;
    /// Throws CorpusError on duplicate triples or zero-valued records.
    explicit InteractionMatrix(std::vector<Interaction> records);

    const std::vector<Interaction>& records() const noexcept { return records_; }
    const std::set<UserId>& users() const noexcept { return users_; }
    const std::set<ItemId>& items() const noexcept { return items_; }
    bool empty() const noexcept { return records_.empty(); }

    /// A user's records in chronological order; equal timestamps keep
    /// record order.
    std::vector<Interaction> profile(const UserId& user) const;
    std::map<UserId, std::vector<Interaction>> profiles() const;

    /// Items the user has interacted with.
    std::set<ItemId> interacted_items(const UserId& user) const;

private:
    std::vector<Interaction> records_;
    std::set<UserId> users_;
    std::set<ItemId> items_;
};

struct ItemMeta {
    ItemId id;
    std::string title;
    std::vector<std::string> categories;
    std::string raw_description;
};

using ItemCatalog = std::map<ItemId, ItemMeta>;

enum class DatasetFormat { amazon_jsonl, generic_csv };

DatasetFormat parse_dataset_format(std::string_view name);

struct IngestReport {
    std::size_t lines = 0;
    std::size_t loaded = 0;
    std::size_t malformed_count = 0;
    std::size_t dedup_count = 0;
    std::size_t zero_value_count = 0;
    std::size_t metadata_malformed_count = 0;

    nlohmann::json to_json() const;
};

struct IngestResult {
    InteractionMatrix matrix;
    ItemCatalog items;
    IngestReport report;
};

/// Loads review records and, optionally, an item metadata JSON Lines file
/// (asin, title, category, description).
///
/// amazon-jsonl: one JSON object per line with reviewerID, asin,
/// unixReviewTime and optional overall. generic-csv: header row with
/// user,item,timestamp and optional value. Unparseable lines are skipped and
/// counted; duplicate triples are dropped and counted.
IngestResult ingest(const std::filesystem::path& path, DatasetFormat format,
                    const std::optional<std::filesystem::path>& metadata_path = std::nullopt);

ItemCatalog load_metadata(const std::filesystem::path& path, IngestReport* report = nullptr);

/// `n_users` users drawn uniformly without replacement, with all of their
/// records. Deterministic for a given seed.
InteractionMatrix sample_subset(const InteractionMatrix& matrix, std::size_t n_users, std::uint64_t seed);

/// Items by number of distinct interacting users, descending; ties by item id.
std::vector<ItemId> popularity_ranking(const InteractionMatrix& matrix);

struct DatasetSplit {
    std::vector<Interaction> train;
    std::map<UserId, Interaction> test;
    std::vector<UserId> excluded_users;
    std::size_t excluded_records = 0;

    /// |train| / |test|; reported, not enforced.
    double train_test_ratio() const;
};

/// Holds out each user's chronologically last interaction. Users with fewer
/// than `min_profile` records are excluded and reported.
DatasetSplit leave_one_out(const InteractionMatrix& matrix, std::size_t min_profile = 2);

struct CorpusStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t interactions = 0;
    double sparsity = 0.0;

    nlohmann::json to_json() const;
};

CorpusStats compute_stats(const InteractionMatrix& matrix);

/// Canonical snapshot: amazon-jsonl records in record order with sorted keys.
void write_snapshot(const InteractionMatrix& matrix, const std::filesystem::path& path);
void write_metadata(const ItemCatalog& items, const std::filesystem::path& path);

nlohmann::json to_json(const ItemMeta& meta);

} // namespace memcorrupt::corpus
