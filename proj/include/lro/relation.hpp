#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace lro {

/// A cell is text or SQL NULL. Null and "" are distinct values.
using Cell = std::optional<std::string>;
using Row = std::vector<Cell>;

/// Ordered-schema table of text cells. Immutable once constructed.
class Relation {
public:
    Relation() = default;
    /// Throws Error(Domain) on duplicate column names or ragged rows.
    Relation(std::string name, std::vector<std::string> columns, std::vector<Row> rows = {});

    const std::string& name() const noexcept { return name_; }
    const std::vector<std::string>& columns() const noexcept { return columns_; }
    const std::vector<Row>& rows() const noexcept { return rows_; }
    std::size_t row_count() const noexcept { return rows_.size(); }
    std::size_t column_count() const noexcept { return columns_.size(); }
    bool empty() const noexcept { return rows_.empty(); }

    std::optional<std::size_t> column_index(std::string_view column) const;
    /// Like column_index but throws Error(Domain) for unknown names.
    std::size_t require_column(std::string_view column) const;
    const Cell& at(std::size_t row, std::size_t column) const { return rows_.at(row).at(column); }

    Relation renamed(std::string name) const;

    friend bool operator==(const Relation&, const Relation&) = default;

private:
    std::string name_;
    std::vector<std::string> columns_;
    std::vector<Row> rows_;
};

/// Named collection of relations, kept in insertion order.
class Database {
public:
    Database() = default;
    explicit Database(std::vector<Relation> relations);

    void add(Relation relation);
    const Relation* find(std::string_view name) const;
    const Relation& get(std::string_view name) const;
    const std::vector<Relation>& relations() const noexcept { return relations_; }
    std::size_t size() const noexcept { return relations_.size(); }

    friend bool operator==(const Database&, const Database&) = default;

private:
    std::vector<Relation> relations_;
};

enum class Granularity { Cell, Row, Column, Table };

const char* to_string(Granularity g) noexcept;
/// Accepts "cell", "row", "column", "table" (case-insensitive).
std::optional<Granularity> parse_granularity(std::string_view text);

struct CellRef {
    std::size_t row = 0;
    std::size_t column = 0;
    Cell value;
    friend bool operator==(const CellRef&, const CellRef&) = default;
};

struct RowRef {
    std::size_t row = 0;
    Row cells;
    friend bool operator==(const RowRef&, const RowRef&) = default;
};

struct ColumnRef {
    std::string name;
    std::vector<Cell> values;
    friend bool operator==(const ColumnRef&, const ColumnRef&) = default;
};

struct TableRef {
    std::string name;
    friend bool operator==(const TableRef&, const TableRef&) = default;
};

/// A member of E_g(R): one relational object at some granularity.
using Element = std::variant<CellRef, RowRef, ColumnRef, TableRef>;

std::vector<Element> extract_elements(const Relation& source, Granularity g);
std::vector<Element> extract_elements(const Database& source, Granularity g);

Relation project(const Relation& r, std::span<const std::string> columns);
Relation filter_by_mask(const Relation& r, const std::vector<bool>& mask);
Relation apply_permutation(const Relation& r, std::span<const std::size_t> perm);
Relation take(const Relation& r, std::size_t n);
/// Appends a column; `values` must have one entry per row.
Relation append_column(const Relation& r, std::string column, std::vector<Cell> values);
Relation append_rows(const Relation& r, std::vector<Row> rows);

struct Group {
    std::vector<Cell> key;
    Relation rows;
};

/// Groups are ordered by first appearance; rows keep their relative order.
std::vector<Group> group_rows(const Relation& r, std::span<const std::string> key_columns);
std::vector<Group> group_rows_by_labels(const Relation& r, std::span<const std::string> labels);

/// Three-way comparison used by classical filters and ORDER BY: numeric when
/// both sides parse as numbers, lexicographic otherwise. Null sorts first.
int compare_cells(const Cell& a, const Cell& b);
std::optional<double> parse_number(std::string_view text);

enum class DataFormat { Csv, Json };

struct LoadOptions {
    /// Unquoted empty CSV fields become null. Quoted "" is always the empty string.
    bool empty_as_null = true;
};

Relation read_csv(std::istream& in, std::string name, const LoadOptions& opts = {});
Relation read_json(std::string_view text, std::string name);
void write_csv(std::ostream& out, const Relation& r);
std::string to_json_text(const Relation& r);

/// Relation name defaults to the file stem.
Relation load_relation(const std::filesystem::path& path, DataFormat format, const LoadOptions& opts = {});
Relation load_relation(const std::filesystem::path& path, const LoadOptions& opts = {});
void save_relation(const std::filesystem::path& path, const Relation& r, DataFormat format);
/// Loads every *.csv and *.json file in a directory, sorted by file name.
Database load_database(const std::filesystem::path& dir, const LoadOptions& opts = {});

std::optional<DataFormat> format_from_extension(const std::filesystem::path& path);

}  // namespace lro
