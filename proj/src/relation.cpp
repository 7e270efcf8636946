#include "lro/relation.hpp"

#include "lro/error.hpp"
#include "text_util.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lro {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::Io: return "io";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::MalformedOutput: return "malformed";
        case ErrorKind::ContextOverflow: return "context_overflow";
        case ErrorKind::Timeout: return "timeout";
        case ErrorKind::Backend: return "backend";
    }
    return "unknown";
}

Relation::Relation(std::string name, std::vector<std::string> columns, std::vector<Row> rows)
    : name_(std::move(name)), columns_(std::move(columns)), rows_(std::move(rows)) {
    std::set<std::string_view> seen;
    for (const auto& c : columns_) {
        if (!seen.insert(c).second) {
            fail(ErrorKind::Domain, "duplicate column name '" + c + "' in relation '" + name_ + "'");
        }
    }
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size() != columns_.size()) {
            fail(ErrorKind::Domain, "row " + std::to_string(i) + " of relation '" + name_ + "' has " +
                                        std::to_string(rows_[i].size()) + " cells, expected " +
                                        std::to_string(columns_.size()));
        }
    }
}

std::optional<std::size_t> Relation::column_index(std::string_view column) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i] == column) return i;
    }
    return std::nullopt;
}

std::size_t Relation::require_column(std::string_view column) const {
    if (auto idx = column_index(column)) return *idx;
    fail(ErrorKind::Domain, "unknown column '" + std::string(column) + "' in relation '" + name_ + "'");
}

Relation Relation::renamed(std::string name) const {
    Relation copy = *this;
    copy.name_ = std::move(name);
    return copy;
}

Database::Database(std::vector<Relation> relations) {
    for (auto& r : relations) add(std::move(r));
}

void Database::add(Relation relation) {
    if (find(relation.name())) {
        fail(ErrorKind::Domain, "duplicate relation name '" + relation.name() + "'");
    }
    relations_.push_back(std::move(relation));
}

const Relation* Database::find(std::string_view name) const {
    for (const auto& r : relations_) {
        if (r.name() == name) return &r;
    }
    return nullptr;
}

const Relation& Database::get(std::string_view name) const {
    if (const auto* r = find(name)) return *r;
    fail(ErrorKind::Domain, "unknown relation '" + std::string(name) + "'");
}

const char* to_string(Granularity g) noexcept {
    switch (g) {
        case Granularity::Cell: return "cell";
        case Granularity::Row: return "row";
        case Granularity::Column: return "column";
        case Granularity::Table: return "table";
    }
    return "?";
}

std::optional<Granularity> parse_granularity(std::string_view text) {
    const std::string t = detail::lower(detail::trim(text));
    if (t == "cell") return Granularity::Cell;
    if (t == "row") return Granularity::Row;
    if (t == "column") return Granularity::Column;
    if (t == "table") return Granularity::Table;
    return std::nullopt;
}

std::vector<Element> extract_elements(const Relation& source, Granularity g) {
    std::vector<Element> out;
    switch (g) {
        case Granularity::Row:
            out.reserve(source.row_count());
            for (std::size_t i = 0; i < source.row_count(); ++i) {
                out.emplace_back(RowRef{i, source.rows()[i]});
            }
            break;
        case Granularity::Column:
            out.reserve(source.column_count());
            for (std::size_t c = 0; c < source.column_count(); ++c) {
                ColumnRef ref{source.columns()[c], {}};
                ref.values.reserve(source.row_count());
                for (const auto& row : source.rows()) ref.values.push_back(row[c]);
                out.emplace_back(std::move(ref));
            }
            break;
        case Granularity::Cell:
            out.reserve(source.row_count() * source.column_count());
            for (std::size_t i = 0; i < source.row_count(); ++i) {
                for (std::size_t c = 0; c < source.column_count(); ++c) {
                    out.emplace_back(CellRef{i, c, source.rows()[i][c]});
                }
            }
            break;
        case Granularity::Table:
            fail(ErrorKind::Usage, "table granularity requires a database source");
    }
    return out;
}

std::vector<Element> extract_elements(const Database& source, Granularity g) {
    if (g != Granularity::Table) {
        fail(ErrorKind::Usage, std::string(to_string(g)) + " granularity requires a relation source");
    }
    std::vector<Element> out;
    out.reserve(source.size());
    for (const auto& r : source.relations()) out.emplace_back(TableRef{r.name()});
    return out;
}

Relation project(const Relation& r, std::span<const std::string> columns) {
    std::vector<std::size_t> idx;
    idx.reserve(columns.size());
    for (const auto& c : columns) idx.push_back(r.require_column(c));
    std::vector<Row> rows;
    rows.reserve(r.row_count());
    for (const auto& row : r.rows()) {
        Row out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(row[i]);
        rows.push_back(std::move(out));
    }
    return Relation(r.name(), {columns.begin(), columns.end()}, std::move(rows));
}

Relation filter_by_mask(const Relation& r, const std::vector<bool>& mask) {
    if (mask.size() != r.row_count()) {
        fail(ErrorKind::Domain, "mask length " + std::to_string(mask.size()) + " does not match row count " +
                                    std::to_string(r.row_count()));
    }
    std::vector<Row> rows;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) rows.push_back(r.rows()[i]);
    }
    return Relation(r.name(), r.columns(), std::move(rows));
}

Relation apply_permutation(const Relation& r, std::span<const std::size_t> perm) {
    if (perm.size() != r.row_count()) fail(ErrorKind::Domain, "permutation length does not match row count");
    std::vector<bool> seen(perm.size(), false);
    for (auto p : perm) {
        if (p >= perm.size() || seen[p]) fail(ErrorKind::Domain, "not a permutation of the row indices");
        seen[p] = true;
    }
    std::vector<Row> rows;
    rows.reserve(perm.size());
    for (auto p : perm) rows.push_back(r.rows()[p]);
    return Relation(r.name(), r.columns(), std::move(rows));
}

Relation take(const Relation& r, std::size_t n) {
    const auto count = std::min(n, r.row_count());
    return Relation(r.name(), r.columns(), {r.rows().begin(), r.rows().begin() + static_cast<std::ptrdiff_t>(count)});
}

Relation append_column(const Relation& r, std::string column, std::vector<Cell> values) {
    if (values.size() != r.row_count()) fail(ErrorKind::Domain, "new column needs one value per row");
    auto columns = r.columns();
    columns.push_back(std::move(column));
    auto rows = r.rows();
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].push_back(std::move(values[i]));
    return Relation(r.name(), std::move(columns), std::move(rows));
}

Relation append_rows(const Relation& r, std::vector<Row> extra) {
    auto rows = r.rows();
    rows.insert(rows.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
    return Relation(r.name(), r.columns(), std::move(rows));
}

namespace {

std::vector<Group> group_by_keys(const Relation& r, const std::vector<std::vector<Cell>>& keys) {
    std::vector<Group> groups;
    std::vector<std::vector<Row>> members;
    std::map<std::vector<Cell>, std::size_t> slot;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto [it, inserted] = slot.try_emplace(keys[i], groups.size());
        if (inserted) {
            groups.push_back(Group{keys[i], {}});
            members.emplace_back();
        }
        members[it->second].push_back(r.rows()[i]);
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        groups[g].rows = Relation(r.name(), r.columns(), std::move(members[g]));
    }
    return groups;
}

}  // namespace

std::vector<Group> group_rows(const Relation& r, std::span<const std::string> key_columns) {
    std::vector<std::size_t> idx;
    for (const auto& c : key_columns) idx.push_back(r.require_column(c));
    std::vector<std::vector<Cell>> keys;
    keys.reserve(r.row_count());
    for (const auto& row : r.rows()) {
        std::vector<Cell> key;
        for (auto i : idx) key.push_back(row[i]);
        keys.push_back(std::move(key));
    }
    return group_by_keys(r, keys);
}

std::vector<Group> group_rows_by_labels(const Relation& r, std::span<const std::string> labels) {
    if (labels.size() != r.row_count()) {
        fail(ErrorKind::Domain, "label count " + std::to_string(labels.size()) + " does not match row count " +
                                    std::to_string(r.row_count()));
    }
    std::vector<std::vector<Cell>> keys;
    keys.reserve(labels.size());
    for (const auto& l : labels) keys.push_back({Cell{l}});
    return group_by_keys(r, keys);
}

std::optional<double> parse_number(std::string_view text) {
    text = detail::trim(text);
    if (text.empty()) return std::nullopt;
    if (text.front() == '+') text.remove_prefix(1);
    double value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

int compare_cells(const Cell& a, const Cell& b) {
    if (!a || !b) return (a ? 1 : 0) - (b ? 1 : 0);
    const auto na = parse_number(*a);
    const auto nb = parse_number(*b);
    if (na && nb) return (*na < *nb) ? -1 : (*na > *nb ? 1 : 0);
    const int c = a->compare(*b);
    return (c > 0) - (c < 0);
}

// RFC-4180 reader: quoted fields may contain separators, doubled quotes and
// line breaks. CRLF and LF line endings are both accepted.
Relation read_csv(std::istream& in, std::string name, const LoadOptions& opts) {
    std::vector<std::vector<Cell>> records;
    std::vector<Cell> record;
    std::string field;
    bool quoted = false;      // field started with a quote
    bool in_quotes = false;   // currently inside the quoted section
    bool field_started = false;
    std::size_t line = 1;

    auto end_field = [&] {
        if (!quoted && field.empty() && opts.empty_as_null) {
            record.emplace_back(std::nullopt);
        } else {
            record.emplace_back(field);
        }
        field.clear();
        quoted = false;
        field_started = false;
    };
    auto end_record = [&] {
        // Blank lines are skipped, so a one-column null row must be written as "".
        const bool blank = record.empty() && field.empty() && !quoted;
        if (blank) return;
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };

    char ch = 0;
    bool any = false;
    while (in.get(ch)) {
        any = true;
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get(ch);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
            case '"':
                if (field_started) {
                    fail(ErrorKind::Parse, "unexpected quote inside unquoted field at line " + std::to_string(line));
                }
                quoted = true;
                in_quotes = true;
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                if (in.peek() == '\n') in.get(ch);
                [[fallthrough]];
            case '\n':
                end_record();
                ++line;
                break;
            default:
                if (quoted) {
                    fail(ErrorKind::Parse, "text after closing quote at line " + std::to_string(line));
                }
                field.push_back(ch);
                field_started = true;
        }
    }
    if (in_quotes) fail(ErrorKind::Parse, "unterminated quoted field");
    if (any && (field_started || !record.empty())) end_record();

    if (records.empty()) fail(ErrorKind::Parse, "CSV input has no header row");
    std::vector<std::string> columns;
    for (const auto& c : records.front()) columns.push_back(c.value_or(""));
    std::vector<Row> rows(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != columns.size()) {
            fail(ErrorKind::Parse, "ragged CSV row " + std::to_string(i + 1) + ": " + std::to_string(rows[i].size()) +
                                       " fields, header has " + std::to_string(columns.size()));
        }
    }
    return Relation(std::move(name), std::move(columns), std::move(rows));
}

namespace {

bool needs_quotes(const std::string& s) {
    return s.empty() || s.find_first_of(",\"\r\n") != std::string::npos;
}

void write_field(std::ostream& out, const Cell& cell) {
    if (!cell) return;  // null is an empty unquoted field
    if (!needs_quotes(*cell)) {
        out << *cell;
        return;
    }
    out << '"';
    for (char c : *cell) {
        if (c == '"') out << '"';
        out << c;
    }
    out << '"';
}

Cell json_to_cell(const nlohmann::ordered_json& v) {
    if (v.is_null()) return std::nullopt;
    if (v.is_string()) return v.get<std::string>();
    if (v.is_object() || v.is_array()) fail(ErrorKind::Parse, "nested JSON values are not supported as cells");
    return v.dump();
}

}  // namespace

void write_csv(std::ostream& out, const Relation& r) {
    for (std::size_t c = 0; c < r.column_count(); ++c) {
        if (c) out << ',';
        write_field(out, Cell{r.columns()[c]});
    }
    out << '\n';
    for (const auto& row : r.rows()) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << ',';
            write_field(out, row[c]);
        }
        out << '\n';
    }
}

Relation read_json(std::string_view text, std::string name) {
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Parse, std::string("malformed JSON: ") + e.what());
    }
    if (!doc.is_array()) fail(ErrorKind::Parse, "JSON relation must be an array of flat objects");
    std::vector<std::string> columns;
    std::vector<Row> rows;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& obj = doc[i];
        if (!obj.is_object()) fail(ErrorKind::Parse, "JSON element " + std::to_string(i) + " is not an object");
        if (i == 0) {
            for (const auto& [k, v] : obj.items()) columns.push_back(k);
        } else if (obj.size() != columns.size()) {
            fail(ErrorKind::Parse, "JSON element " + std::to_string(i) + " has a different key set");
        }
        Row row;
        row.reserve(columns.size());
        for (const auto& c : columns) {
            auto it = obj.find(c);
            if (it == obj.end()) fail(ErrorKind::Parse, "JSON element " + std::to_string(i) + " lacks key '" + c + "'");
            row.push_back(json_to_cell(*it));
        }
        rows.push_back(std::move(row));
    }
    return Relation(std::move(name), std::move(columns), std::move(rows));
}

std::string to_json_text(const Relation& r) {
    auto doc = nlohmann::ordered_json::array();
    for (const auto& row : r.rows()) {
        nlohmann::ordered_json obj = nlohmann::ordered_json::object();
        for (std::size_t c = 0; c < r.column_count(); ++c) {
            obj[r.columns()[c]] = row[c] ? nlohmann::ordered_json(*row[c]) : nlohmann::ordered_json(nullptr);
        }
        doc.push_back(std::move(obj));
    }
    return doc.dump(2) + "\n";
}

std::optional<DataFormat> format_from_extension(const std::filesystem::path& path) {
    const auto ext = detail::lower(path.extension().string());
    if (ext == ".csv") return DataFormat::Csv;
    if (ext == ".json") return DataFormat::Json;
    return std::nullopt;
}

Relation load_relation(const std::filesystem::path& path, DataFormat format, const LoadOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    const std::string name = path.stem().string();
    if (format == DataFormat::Csv) return read_csv(in, name, opts);
    std::stringstream buf;
    buf << in.rdbuf();
    return read_json(buf.str(), name);
}

Relation load_relation(const std::filesystem::path& path, const LoadOptions& opts) {
    auto fmt = format_from_extension(path);
    if (!fmt) fail(ErrorKind::Usage, "cannot infer data format of '" + path.string() + "' (expected .csv or .json)");
    return load_relation(path, *fmt, opts);
}

void save_relation(const std::filesystem::path& path, const Relation& r, DataFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    if (format == DataFormat::Csv) {
        write_csv(out, r);
    } else {
        out << to_json_text(r);
    }
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

Database load_database(const std::filesystem::path& dir, const LoadOptions& opts) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) fail(ErrorKind::Io, "'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && format_from_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    Database db;
    for (const auto& f : files) db.add(load_relation(f, opts));
    return db;
}

}  // namespace lro
