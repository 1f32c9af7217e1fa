// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/corpus.hpp"

#include "memcorrupt/text.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <tuple>

namespace memcorrupt::corpus {

using nlohmann::json;

namespace {

struct TripleLess {
    bool operator()(const Interaction& a, const Interaction& b) const
    {
        return std::tie(a.user, a.item, a.timestamp) < std::tie(b.user, b.item, b.timestamp);
    }
};

std::ifstream open_input(const std::filesystem::path& path)
{
    if (!std::filesystem::is_regular_file(path))
        throw FileNotFound("dataset file not found: " + path.string());
    std::ifstream in(path);
    if (!in)
        throw FileNotFound("cannot open dataset file: " + path.string());
    return in;
}

std::string json_text(const json& value)
{
    if (value.is_string())
        return value.get<std::string>();
    if (value.is_number_integer())
        return std::to_string(value.get<std::int64_t>());
    return value.dump();
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

std::string text_or_join(const json& value, std::string_view separator)
{
    if (value.is_string())
        return value.get<std::string>();
    if (value.is_array()) {
        std::vector<std::string> parts;
        for (const auto& v : value) {
            if (v.is_string() && !v.get<std::string>().empty())
                parts.push_back(v.get<std::string>());
        }
        return text::join(parts, separator);
    }
    return {};
}

} // namespace

InteractionMatrix::InteractionMatrix(std::vector<Interaction> records) : records_(std::move(records))
{
    std::set<Interaction, TripleLess> seen;
    for (const auto& r : records_) {
        if (r.user.empty() || r.item.empty())
            throw CorpusError("interaction with empty user or item id");
        if (r.value == 0.0)
            throw CorpusError("interaction with zero feedback value");
        if (!seen.insert(r).second)
            throw CorpusError("duplicate interaction (" + r.user.str() + ", " + r.item.str() + ", " +
                              std::to_string(r.timestamp) + ")");
        users_.insert(r.user);
        items_.insert(r.item);
    }
}

std::vector<Interaction> InteractionMatrix::profile(const UserId& user) const
{
    std::vector<Interaction> out;
    for (const auto& r : records_) {
        if (r.user == user)
            out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    return out;
}

std::map<UserId, std::vector<Interaction>> InteractionMatrix::profiles() const
{
    std::map<UserId, std::vector<Interaction>> out;
    for (const auto& r : records_)
        out[r.user].push_back(r);
    for (auto& [user, list] : out) {
        std::stable_sort(list.begin(), list.end(),
                         [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    }
    return out;
}

std::set<ItemId> InteractionMatrix::interacted_items(const UserId& user) const
{
    std::set<ItemId> out;
    for (const auto& r : records_) {
        if (r.user == user)
            out.insert(r.item);
    }
    return out;
}

DatasetFormat parse_dataset_format(std::string_view name)
{
    if (name == "amazon-jsonl")
        return DatasetFormat::amazon_jsonl;
    if (name == "generic-csv")
        return DatasetFormat::generic_csv;
    throw PreconditionError("unknown dataset format: " + std::string(name));
}

json IngestReport::to_json() const
{
    return {{"lines", lines},
            {"loaded", loaded},
            {"malformed_count", malformed_count},
            {"dedup_count", dedup_count},
            {"zero_value_count", zero_value_count},
            {"metadata_malformed_count", metadata_malformed_count}};
}

ItemCatalog load_metadata(const std::filesystem::path& path, IngestReport* report)
{
    auto in = open_input(path);
    ItemCatalog items;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty())
            continue;
        try {
            auto obj = json::parse(line);
            ItemMeta meta;
            meta.id = ItemId(json_text(obj.at("asin")));
            meta.title = std::string(text::trim(text_or_join(obj.value("title", json()), " ")));
            if (meta.id.empty() || meta.title.empty())
                throw SchemaMismatch("metadata line without asin or title");
            auto categories = obj.value("category", json::array());
            if (categories.is_string()) {
                meta.categories.push_back(categories.get<std::string>());
            } else {
                for (const auto& c : categories) {
                    if (c.is_string() && !c.get<std::string>().empty())
                        meta.categories.push_back(c.get<std::string>());
                }
            }
            meta.raw_description = text_or_join(obj.value("description", json()), " ");
            items.insert_or_assign(meta.id, std::move(meta));
        } catch (const std::exception&) {
            if (report)
                ++report->metadata_malformed_count;
        }
    }
    return items;
}

IngestResult ingest(const std::filesystem::path& path, DatasetFormat format,
                    const std::optional<std::filesystem::path>& metadata_path)
{
    auto in = open_input(path);
    IngestResult result;
    auto& report = result.report;
    std::vector<Interaction> records;
    std::set<Interaction, TripleLess> seen;

    auto accept = [&](Interaction r) {
        if (r.value == 0.0) {
            ++report.zero_value_count;
            return;
        }
        if (!seen.insert(r).second) {
            ++report.dedup_count;
            return;
        }
        records.push_back(std::move(r));
    };

    std::string line;
    if (format == DatasetFormat::amazon_jsonl) {
        while (std::getline(in, line)) {
            if (text::trim(line).empty())
                continue;
            ++report.lines;
            try {
                auto obj = json::parse(line);
                Interaction r;
                r.user = UserId(json_text(obj.at("reviewerID")));
                r.item = ItemId(json_text(obj.at("asin")));
                r.timestamp = obj.at("unixReviewTime").get<std::int64_t>();
                r.value = obj.value("overall", 1.0);
                if (r.user.empty() || r.item.empty())
                    throw SchemaMismatch("empty id");
                accept(std::move(r));
            } catch (const std::exception&) {
                ++report.malformed_count;
            }
        }
    } else {
        if (!std::getline(in, line))
            throw EmptyDataset("empty CSV file: " + path.string());
        auto header = split_csv_line(line);
        auto column = [&](std::string_view name) -> std::optional<std::size_t> {
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (text::trim(header[i]) == name)
                    return i;
            }
            return std::nullopt;
        };
        auto user_col = column("user");
        auto item_col = column("item");
        auto ts_col = column("timestamp");
        auto value_col = column("value");
        if (!user_col || !item_col || !ts_col)
            throw SchemaMismatch("CSV header must contain user,item,timestamp: " + line);
        while (std::getline(in, line)) {
            if (text::trim(line).empty())
                continue;
            ++report.lines;
            auto fields = split_csv_line(line);
            try {
                auto need = std::max({*user_col, *item_col, *ts_col, value_col.value_or(0)});
                if (fields.size() <= need)
                    throw SchemaMismatch("short row");
                Interaction r;
                r.user = UserId(std::string(text::trim(fields[*user_col])));
                r.item = ItemId(std::string(text::trim(fields[*item_col])));
                std::size_t consumed = 0;
                auto ts_text = std::string(text::trim(fields[*ts_col]));
                r.timestamp = std::stoll(ts_text, &consumed);
                if (consumed != ts_text.size())
                    throw SchemaMismatch("bad timestamp");
                if (value_col)
                    r.value = std::stod(std::string(text::trim(fields[*value_col])));
                if (r.user.empty() || r.item.empty())
                    throw SchemaMismatch("empty id");
                accept(std::move(r));
            } catch (const std::exception&) {
                ++report.malformed_count;
            }
        }
    }

    if (records.empty()) {
        if (report.malformed_count > 0 && report.malformed_count == report.lines)
            throw SchemaMismatch("no line of " + path.string() + " carries the required fields");
        throw EmptyDataset("no interactions in " + path.string());
    }
    report.loaded = records.size();
    result.matrix = InteractionMatrix(std::move(records));
    if (metadata_path)
        result.items = load_metadata(*metadata_path, &report);
    return result;
}

InteractionMatrix sample_subset(const InteractionMatrix& matrix, std::size_t n_users, std::uint64_t seed)
{
    const auto& users = matrix.users();
    if (n_users > users.size())
        throw TooFewUsers("requested " + std::to_string(n_users) + " users but only " +
                          std::to_string(users.size()) + " are available");
    std::vector<UserId> order(users.begin(), users.end());
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::set<UserId> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_users));

    std::vector<Interaction> kept;
    for (const auto& r : matrix.records()) {
        if (chosen.count(r.user))
            kept.push_back(r);
    }
    return InteractionMatrix(std::move(kept));
}

std::vector<ItemId> popularity_ranking(const InteractionMatrix& matrix)
{
    std::map<ItemId, std::set<UserId>> users_per_item;
    for (const auto& r : matrix.records())
        users_per_item[r.item].insert(r.user);
    std::vector<std::pair<ItemId, std::size_t>> counts;
    for (const auto& [item, users] : users_per_item)
        counts.emplace_back(item, users.size());
    // users_per_item iterates in id order, so a stable sort on count alone
    // leaves ties in lexicographic id order.
    std::stable_sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<ItemId> out;
    out.reserve(counts.size());
    for (auto& [item, count] : counts)
        out.push_back(std::move(item));
    return out;
}

double DatasetSplit::train_test_ratio() const
{
    if (test.empty())
        return 0.0;
    return static_cast<double>(train.size()) / static_cast<double>(test.size());
}

DatasetSplit leave_one_out(const InteractionMatrix& matrix, std::size_t min_profile)
{
    DatasetSplit split;
    for (auto& [user, profile] : matrix.profiles()) {
        if (profile.size() < std::max<std::size_t>(min_profile, 2)) {
            split.excluded_users.push_back(user);
            split.excluded_records += profile.size();
            continue;
        }
        split.test.emplace(user, profile.back());
        split.train.insert(split.train.end(), profile.begin(), profile.end() - 1);
    }
    return split;
}

json CorpusStats::to_json() const
{
    return {{"users", users}, {"items", items}, {"interactions", interactions}, {"sparsity", sparsity}};
}

CorpusStats compute_stats(const InteractionMatrix& matrix)
{
    CorpusStats stats;
    stats.users = matrix.users().size();
    stats.items = matrix.items().size();
    stats.interactions = matrix.records().size();
    auto cells = static_cast<double>(stats.users) * static_cast<double>(stats.items);
    stats.sparsity = cells > 0.0 ? 1.0 - static_cast<double>(stats.interactions) / cells : 0.0;
    return stats;
}

void write_snapshot(const InteractionMatrix& matrix, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write snapshot: " + path.string());
    for (const auto& r : matrix.records()) {
        json line = {{"reviewerID", r.user.str()},
                     {"asin", r.item.str()},
                     {"unixReviewTime", r.timestamp},
                     {"overall", r.value}};
        out << line.dump() << '\n';
    }
    if (!out)
        throw IoError("failed writing snapshot: " + path.string());
}

json to_json(const ItemMeta& meta)
{
    return {{"asin", meta.id.str()},
            {"title", meta.title},
            {"category", meta.categories},
            {"description", meta.raw_description}};
}

void write_metadata(const ItemCatalog& items, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write metadata: " + path.string());
    for (const auto& [id, meta] : items)
        out << to_json(meta).dump() << '\n';
    if (!out)
        throw IoError("failed writing metadata: " + path.string());
}

} // namespace memcorrupt::corpus
