#include "lro/prompt_kit.hpp"

#include "lro/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lro {

using nlohmann::json;

void PromptOptions::validate() const {
    if (examples && example_count < 1) fail(ErrorKind::Usage, "example_count must be at least 1 when EX is on");
}

namespace {

std::string cell_text(const Cell& c) { return c ? *c : std::string("NULL"); }

std::string quoted(const std::string& s) {
    return json(s).dump();
}

std::vector<std::string> sample_values(const std::vector<Cell>& values, std::size_t limit) {
    std::vector<std::string> out;
    for (const auto& v : values) {
        if (out.size() >= limit) break;
        if (v) out.push_back(*v);
    }
    return out;
}

std::string render_row(const std::vector<std::string>& columns, const Row& row) {
    std::string out;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (c) out += "; ";
        out += columns[c] + ": " + cell_text(row[c]);
    }
    return out;
}

}  // namespace

std::string render_element(const Element& e, const PromptOptions& opts, const RenderContext& ctx) {
    struct Visitor {
        const PromptOptions& opts;
        const RenderContext& ctx;

        std::string operator()(const CellRef& c) const { return cell_text(c.value); }

        std::string operator()(const RowRef& r) const {
            if (ctx.relation && ctx.relation->column_count() == r.cells.size()) {
                return render_row(ctx.relation->columns(), r.cells);
            }
            std::vector<std::string> positional;
            for (std::size_t i = 0; i < r.cells.size(); ++i) positional.push_back("column" + std::to_string(i));
            return render_row(positional, r.cells);
        }

        std::string operator()(const ColumnRef& c) const {
            if (!opts.examples) return c.name;
            const auto samples = sample_values(c.values, opts.example_count);
            std::string out = c.name + " (examples: ";
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (i) out += ", ";
                out += quoted(samples[i]);
            }
            return out + ")";
        }

        std::string operator()(const TableRef& t) const {
            const Relation* rel = ctx.database ? ctx.database->find(t.name) : nullptr;
            if (!rel) return t.name;
            std::string out = t.name + "(";
            for (std::size_t i = 0; i < rel->column_count(); ++i) {
                if (i) out += ", ";
                out += rel->columns()[i];
            }
            out += ")";
            if (opts.examples) {
                const auto n = std::min(opts.example_count, rel->row_count());
                for (std::size_t r = 0; r < n; ++r) {
                    out += "\n    e.g. (";
                    for (std::size_t c = 0; c < rel->column_count(); ++c) {
                        if (c) out += ", ";
                        out += cell_text(rel->rows()[r][c]);
                    }
                    out += ")";
                }
            }
            return out;
        }
    };
    return std::visit(Visitor{opts, ctx}, e);
}

// ---------------------------------------------------------------------------
// Templates

const char* template_name(PromptShape shape) noexcept {
    switch (shape) {
        case PromptShape::SelectAll: return "select_all";
        case PromptShape::SelectOne: return "select_one";
        case PromptShape::MatchAll: return "match_all";
        case PromptShape::MatchOne: return "match_one";
        case PromptShape::MatchSemi: return "match_semi";
        case PromptShape::ImputeCellAll: return "impute_cell_all";
        case PromptShape::ImputeCellOne: return "impute_cell_one";
        case PromptShape::ImputeColumnAll: return "impute_column_all";
        case PromptShape::ImputeColumnOne: return "impute_column_one";
        case PromptShape::ImputeRowOne: return "impute_row_one";
        case PromptShape::ClusterAll: return "cluster_all";
        case PromptShape::ClusterOne: return "cluster_one";
        case PromptShape::OrderAll: return "order_all";
        case PromptShape::OrderCompare: return "order_compare";
        case PromptShape::OrderScore: return "order_score";
        case PromptShape::Judge: return "judge";
    }
    return "unknown";
}

namespace {

constexpr PromptShape kAllShapes[] = {
    PromptShape::SelectAll,       PromptShape::SelectOne,     PromptShape::MatchAll,        PromptShape::MatchOne,
    PromptShape::MatchSemi,       PromptShape::ImputeCellAll, PromptShape::ImputeCellOne,   PromptShape::ImputeColumnAll,
    PromptShape::ImputeColumnOne, PromptShape::ImputeRowOne,  PromptShape::ClusterAll,      PromptShape::ClusterOne,
    PromptShape::OrderAll,        PromptShape::OrderCompare,  PromptShape::OrderScore,      PromptShape::Judge,
};

constexpr const char* kSystemTemplate =
    "You are a careful data assistant working on relational tables. Follow the task exactly and finish your "
    "answer with a single JSON value in the requested output format.";

const char* builtin_template(PromptShape shape) {
    switch (shape) {
        case PromptShape::SelectAll:
            return "Task: select every numbered candidate that satisfies the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Candidates:\n{{candidates}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::SelectOne:
            return "Task: decide whether the candidate satisfies the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Candidate:\n{{element}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::MatchAll:
            return "Task: find every (left, right) pair of items that satisfies the matching requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Left items:\n{{candidates}}\n\n"
                   "Right items:\n{{right}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::MatchOne:
            return "Task: decide whether the left item and the right item match under the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Left item:\n{{element}}\n\n"
                   "Right item:\n{{second}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::MatchSemi:
            return "Task: select every numbered option that matches the left item under the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Left item:\n{{element}}\n\n"
                   "Options:\n{{right}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ImputeCellAll:
            return "Task: fill in the missing (NULL) cells of the table.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Rows:\n{{context}}\n\n"
                   "Missing cells:\n{{candidates}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ImputeCellOne:
            return "Task: fill in the missing value of column \"{{column}}\" in the row below.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Row:\n{{element}}\n\n"
                   "Reference rows:\n{{context}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ImputeColumnAll:
            return "Task: derive the value of the new column \"{{column}}\" for every numbered row.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Rows:\n{{candidates}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ImputeColumnOne:
            return "Task: derive the value of the new column \"{{column}}\" for the row below.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Row:\n{{element}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ImputeRowOne:
            return "Task: generate one new row for the table that satisfies the requirement and does not "
                   "duplicate an existing row.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Columns: {{column}}\n\n"
                   "Existing rows:\n{{context}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ClusterAll:
            return "Task: partition the numbered elements into clusters according to the requirement. Choose "
                   "the number of clusters yourself and give each cluster a short label.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Elements:\n{{candidates}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::ClusterOne:
            return "Task: assign the element to one of the existing clusters, or name a new cluster if none "
                   "fits, according to the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Existing clusters:\n{{context}}\n\n"
                   "Element:\n{{element}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::OrderAll:
            return "Task: rank all numbered rows according to the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Rows:\n{{candidates}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::OrderCompare:
            return "Task: compare two rows and decide which one ranks first according to the requirement.\n"
                   "Requirement: {{requirement}}\n\n"
                   "[0] {{element}}\n"
                   "[1] {{second}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::OrderScore:
            return "Task: score the row from 0 to 100 by how well it ranks under the requirement; higher "
                   "scores rank earlier.\n"
                   "Requirement: {{requirement}}\n\n"
                   "Row:\n{{element}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
        case PromptShape::Judge:
            return "Task: judge whether two values are semantically identical (same meaning, possibly written "
                   "differently).\n"
                   "Context: {{requirement}}\n\n"
                   "Value A: {{element}}\n"
                   "Value B: {{second}}\n\n"
                   "{{reasoning}}\nOutput format: {{output_format}}\n";
    }
    return "";
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read template '" + p.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

PromptTemplates PromptTemplates::builtin() {
    PromptTemplates t;
    t.version_ = "v1";
    t.system_ = kSystemTemplate;
    for (auto shape : kAllShapes) t.templates_[template_name(shape)] = builtin_template(shape);
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) fail(ErrorKind::Io, "template directory '" + dir.string() + "' not found");
    auto t = builtin();
    t.version_ = dir.filename().string();
    if (auto p = dir / "system.txt"; std::filesystem::exists(p)) t.system_ = read_file(p);
    for (auto shape : kAllShapes) {
        const auto p = dir / (std::string(template_name(shape)) + ".txt");
        if (std::filesystem::exists(p)) t.templates_[template_name(shape)] = read_file(p);
    }
    return t;
}

void PromptTemplates::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream out(dir / (name + ".txt"), std::ios::binary);
        if (!out) fail(ErrorKind::Io, "cannot write template '" + name + "'");
        out << body;
    };
    write("system", system_);
    for (const auto& [name, body] : templates_) write(name, body);
}

const std::string& PromptTemplates::get(PromptShape shape) const {
    auto it = templates_.find(template_name(shape));
    if (it == templates_.end()) fail(ErrorKind::Usage, std::string("missing template ") + template_name(shape));
    return it->second;
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) fail(ErrorKind::Usage, "unterminated placeholder in template");
        out.append(tmpl.substr(pos, open - pos));
        const auto name = tmpl.substr(open + 2, close - open - 2);
        auto it = values.find(name);
        if (it == values.end()) fail(ErrorKind::Usage, "unknown template placeholder {{" + std::string(name) + "}}");
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

namespace {

std::string numbered(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += "\n";
        out += "[" + std::to_string(i) + "] " + items[i];
    }
    return out;
}

std::string output_format(PromptShape shape, const PromptPayload& p) {
    switch (shape) {
        case PromptShape::SelectAll:
            return R"({"selected": [<numbers of the candidates that satisfy the requirement>]})";
        case PromptShape::SelectOne: return R"({"keep": true or false})";
        case PromptShape::MatchAll: return R"({"pairs": [[<left number>, <right number>], ...]})";
        case PromptShape::MatchOne: return R"({"match": true or false})";
        case PromptShape::MatchSemi: return R"({"matches": [<numbers of the matching options>]})";
        case PromptShape::ImputeCellAll:
            return R"({"values": [<one string per missing cell, in order>]} with exactly )" +
                   std::to_string(p.candidates.size()) + " values";
        case PromptShape::ImputeColumnAll:
            return R"({"values": [<one string per row, in order>]} with exactly )" +
                   std::to_string(p.candidates.size()) + " values";
        case PromptShape::ImputeCellOne:
        case PromptShape::ImputeColumnOne: return R"({"value": "<text>"})";
        case PromptShape::ImputeRowOne:
            return R"({"row": {<one "column": "value" entry for each of: )" + p.column + ">}}";
        case PromptShape::ClusterAll:
            return R"({"clusters": [{"label": "<name>", "members": [<element numbers>]}, ...]} with every )"
                   "element in exactly one cluster";
        case PromptShape::ClusterOne: return R"({"cluster": "<existing cluster label, or a new label>"})";
        case PromptShape::OrderAll: return R"({"ranking": [<every row number, from first to last>]})";
        case PromptShape::OrderCompare:
            return R"({"first_better": true if row [0] ranks before row [1], otherwise false})";
        case PromptShape::OrderScore: return R"({"score": <number from 0 to 100>})";
        case PromptShape::Judge: return R"({"same": true or false})";
    }
    return "";
}

void check_payload(PromptShape shape, const PromptPayload& p, std::string_view requirement) {
    auto need = [&](bool ok, const char* what) {
        if (!ok) fail(ErrorKind::Usage, std::string(template_name(shape)) + " prompt needs " + what);
    };
    if (shape != PromptShape::Judge) need(!requirement.empty(), "a non-empty requirement");
    switch (shape) {
        case PromptShape::SelectAll:
        case PromptShape::ClusterAll:
        case PromptShape::OrderAll: need(!p.candidates.empty(), "at least one candidate"); break;
        case PromptShape::ImputeColumnAll:
            need(!p.candidates.empty(), "at least one row");
            need(!p.column.empty(), "a target column");
            break;
        case PromptShape::ImputeCellAll: need(!p.candidates.empty(), "at least one missing cell"); break;
        case PromptShape::MatchAll:
            need(!p.candidates.empty() && !p.right.empty(), "non-empty left and right lists");
            break;
        case PromptShape::MatchSemi: need(!p.element.empty() && !p.right.empty(), "one left item and options"); break;
        case PromptShape::MatchOne:
        case PromptShape::OrderCompare: need(!p.element.empty() && !p.second.empty(), "two items"); break;
        case PromptShape::ImputeCellOne:
        case PromptShape::ImputeColumnOne:
            need(!p.element.empty(), "one row");
            need(!p.column.empty(), "a target column");
            break;
        case PromptShape::ImputeRowOne: need(!p.column.empty(), "the column list"); break;
        case PromptShape::SelectOne:
        case PromptShape::ClusterOne:
        case PromptShape::OrderScore: need(!p.element.empty(), "one element"); break;
        case PromptShape::Judge: break;
    }
}

}  // namespace

ChatRequest build_prompt(const PromptTemplates& templates, PromptShape shape, const PromptPayload& payload,
                         std::string_view requirement, const PromptOptions& opts, RequestTag tag,
                         std::size_t context_budget) {
    check_payload(shape, payload, requirement);
    const std::map<std::string, std::string, std::less<>> values{
        {"requirement", std::string(requirement)},
        {"candidates", numbered(payload.candidates)},
        {"right", numbered(payload.right)},
        {"element", payload.element},
        {"second", payload.second},
        {"context", payload.context.empty() ? std::string("(none)") : payload.context},
        {"column", payload.column},
        {"output_format", output_format(shape, payload)},
        {"reasoning", opts.cot ? "Think step by step and explain your reasoning briefly, then end your answer with "
                                 "the JSON value."
                               : "Answer with the JSON value only."},
    };
    ChatRequest req{templates.system(), fill_template(templates.get(shape), values), std::move(tag)};
    if (context_budget > 0) {
        const auto tokens = estimate_request_tokens(req);
        if (tokens > static_cast<std::int64_t>(context_budget)) {
            fail(ErrorKind::ContextOverflow, std::string(template_name(shape)) + " prompt needs ~" +
                                                 std::to_string(tokens) + " tokens, budget is " +
                                                 std::to_string(context_budget));
        }
    }
    return req;
}

// ---------------------------------------------------------------------------
// Parsing

std::optional<std::string> last_json_value(std::string_view text) {
    for (std::size_t end = text.size(); end > 0; --end) {
        const char close = text[end - 1];
        if (close != '}' && close != ']') continue;
        const char open = close == '}' ? '{' : '[';
        for (std::size_t start = end - 1; start-- > 0;) {
            if (text[start] != open) continue;
            const auto candidate = text.substr(start, end - start);
            if (json::accept(candidate)) return std::string(candidate);
        }
    }
    return std::nullopt;
}

namespace {

[[noreturn]] void malformed(const ExpectedShape& e, const std::string& why) {
    fail(ErrorKind::MalformedOutput, std::string(template_name(e.shape)) + " output: " + why);
}

/// The last JSON value, or a bare scalar literal when the tail is one.
json extract(const ExpectedShape& e, std::string_view completion) {
    if (auto text = last_json_value(completion)) return json::parse(*text);
    auto tail = completion;
    while (!tail.empty() && std::isspace(static_cast<unsigned char>(tail.back()))) tail.remove_suffix(1);
    const auto cut = tail.find_last_of(" \t\r\n:");
    const auto word = cut == std::string_view::npos ? tail : tail.substr(cut + 1);
    if (!word.empty() && json::accept(word)) {
        auto v = json::parse(word);
        if (v.is_primitive()) return v;
    }
    malformed(e, "no JSON value found");
}

const json& member(const ExpectedShape& e, const json& v, const char* key) {
    if (v.is_object()) {
        auto it = v.find(key);
        if (it == v.end()) malformed(e, std::string("missing key \"") + key + "\"");
        return *it;
    }
    return v;
}

std::size_t index_value(const ExpectedShape& e, const json& v, std::size_t bound) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
        if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>() && v.get<double>() >= 0) {
            const auto d = v.get<double>();
            if (d >= static_cast<double>(bound)) malformed(e, "index " + v.dump() + " out of bounds");
            return static_cast<std::size_t>(d);
        }
        malformed(e, "expected an integer index, got " + v.dump());
    }
    const auto i = v.get<std::int64_t>();
    if (i < 0 || static_cast<std::size_t>(i) >= bound) {
        malformed(e, "index " + std::to_string(i) + " out of bounds [0, " + std::to_string(bound) + ")");
    }
    return static_cast<std::size_t>(i);
}

bool bool_value(const ExpectedShape& e, const json& v) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "true" || s == "yes" || s == "True" || s == "Yes") return true;
        if (s == "false" || s == "no" || s == "False" || s == "No") return false;
    }
    malformed(e, "expected a boolean, got " + v.dump());
}

Cell cell_value(const ExpectedShape& e, const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    malformed(e, "expected a text value, got " + v.dump());
}

const char* verdict_key(PromptShape s) {
    switch (s) {
        case PromptShape::SelectOne: return "keep";
        case PromptShape::MatchOne: return "match";
        case PromptShape::OrderCompare: return "first_better";
        case PromptShape::Judge: return "same";
        default: return "";
    }
}

const char* index_key(PromptShape s) { return s == PromptShape::MatchSemi ? "matches" : "selected"; }

}  // namespace

ParsedValue parse_completion(const ExpectedShape& e, std::string_view completion) {
    const json v = extract(e, completion);
    const std::string raw(completion);
    switch (e.shape) {
        case PromptShape::SelectOne:
        case PromptShape::MatchOne:
        case PromptShape::OrderCompare:
        case PromptShape::Judge:
            return ParsedVerdict{bool_value(e, member(e, v, verdict_key(e.shape))), raw};

        case PromptShape::SelectAll:
        case PromptShape::MatchSemi: {
            const auto& list = member(e, v, index_key(e.shape));
            if (!list.is_array()) malformed(e, "expected an array of indices");
            const std::size_t bound = e.shape == PromptShape::MatchSemi ? e.right_count : e.count;
            std::set<std::size_t> picked;
            for (const auto& x : list) picked.insert(index_value(e, x, bound));
            return ParsedIndexList{{picked.begin(), picked.end()}, raw};
        }

        case PromptShape::MatchAll: {
            const auto& list = member(e, v, "pairs");
            if (!list.is_array()) malformed(e, "expected an array of pairs");
            ParsedPairList out{{}, raw};
            std::set<std::pair<std::size_t, std::size_t>> seen;
            for (const auto& p : list) {
                if (!p.is_array() || p.size() != 2) malformed(e, "each pair must be a two-element array");
                std::pair<std::size_t, std::size_t> pr{index_value(e, p[0], e.count), index_value(e, p[1], e.right_count)};
                if (seen.insert(pr).second) out.pairs.push_back(pr);
            }
            return out;
        }

        case PromptShape::ClusterAll: {
            const auto& list = member(e, v, "clusters");
            if (!list.is_array()) malformed(e, "expected an array of clusters");
            ParsedAssignment out{{}, false, raw};
            std::vector<int> hits(e.count, 0);
            for (std::size_t k = 0; k < list.size(); ++k) {
                const auto& c = list[k];
                ParsedCluster cluster;
                const json* members = &c;
                if (c.is_object()) {
                    if (auto it = c.find("label"); it != c.end() && !it->is_null()) {
                        cluster.label = it->is_string() ? it->get<std::string>() : it->dump();
                    }
                    auto it = c.find("members");
                    if (it == c.end()) malformed(e, "cluster lacks \"members\"");
                    members = &*it;
                }
                if (!members->is_array()) malformed(e, "cluster members must be an array");
                for (const auto& m : *members) {
                    const auto idx = index_value(e, m, e.count);
                    ++hits[idx];
                    cluster.members.push_back(idx);
                }
                out.clusters.push_back(std::move(cluster));
            }
            out.complete = std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
            return out;
        }

        case PromptShape::ClusterOne: {
            const auto& label = member(e, v, "cluster");
            std::string text = label.is_string() ? label.get<std::string>() : label.dump();
            if (label.is_null() || text.empty()) malformed(e, "empty cluster label");
            return ParsedAssignment{{ParsedCluster{std::move(text), {0}}}, true, raw};
        }

        case PromptShape::OrderAll: {
            const auto& list = member(e, v, "ranking");
            if (!list.is_array()) malformed(e, "expected an array ranking");
            ParsedRanking out{{}, false, raw};
            std::vector<bool> seen(e.count, false);
            bool dup = false;
            for (const auto& x : list) {
                const auto idx = index_value(e, x, e.count);
                if (seen[idx]) {
                    dup = true;
                    continue;
                }
                seen[idx] = true;
                out.order.push_back(idx);
            }
            out.complete = !dup && out.order.size() == e.count;
            return out;
        }

        case PromptShape::OrderScore: {
            const auto& s = member(e, v, "score");
            double score = 0;
            if (s.is_number()) {
                score = s.get<double>();
            } else if (s.is_string()) {
                auto n = parse_number(s.get<std::string>());
                if (!n) malformed(e, "score is not a number");
                score = *n;
            } else {
                malformed(e, "score is not a number");
            }
            if (!(score >= 0.0 && score <= 100.0)) malformed(e, "score " + s.dump() + " outside [0, 100]");
            return ParsedScore{score, raw};
        }

        case PromptShape::ImputeCellAll:
        case PromptShape::ImputeColumnAll: {
            const auto& list = member(e, v, "values");
            if (!list.is_array()) malformed(e, "expected an array of values");
            if (list.size() != e.count) {
                malformed(e, "expected " + std::to_string(e.count) + " values, got " + std::to_string(list.size()));
            }
            ParsedCells out{{}, raw};
            for (const auto& x : list) out.values.push_back(cell_value(e, x));
            return out;
        }

        case PromptShape::ImputeCellOne:
        case PromptShape::ImputeColumnOne: {
            const auto& x = member(e, v, "value");
            return ParsedCells{{cell_value(e, x)}, raw};
        }

        case PromptShape::ImputeRowOne: {
            const auto& row = member(e, v, "row");
            ParsedCells out{{}, raw};
            if (row.is_array()) {
                if (row.size() != e.columns.size()) {
                    malformed(e, "generated row arity " + std::to_string(row.size()) + " does not match schema arity " +
                                     std::to_string(e.columns.size()));
                }
                for (const auto& x : row) out.values.push_back(x.is_null() ? Cell{} : cell_value(e, x));
                return out;
            }
            if (!row.is_object()) malformed(e, "generated row must be an object");
            if (row.size() != e.columns.size()) {
                malformed(e, "generated row arity " + std::to_string(row.size()) + " does not match schema arity " +
                                 std::to_string(e.columns.size()));
            }
            for (const auto& c : e.columns) {
                auto it = row.find(c);
                if (it == row.end()) malformed(e, "generated row lacks column \"" + c + "\"");
                out.values.push_back(it->is_null() ? Cell{} : cell_value(e, *it));
            }
            return out;
        }
    }
    malformed(e, "unsupported shape");
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize_verdict(PromptShape shape, bool value) {
    return json{{verdict_key(shape), value}}.dump();
}

std::string serialize_indices(PromptShape shape, const std::vector<std::size_t>& indices) {
    return json{{index_key(shape), indices}}.dump();
}

std::string serialize_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    json list = json::array();
    for (const auto& [l, r] : pairs) list.push_back({l, r});
    return json{{"pairs", list}}.dump();
}

std::string serialize_assignment(const std::vector<ParsedCluster>& clusters) {
    json list = json::array();
    for (const auto& c : clusters) {
        nlohmann::ordered_json obj;
        obj["label"] = c.label;
        obj["members"] = c.members;
        list.push_back(json::parse(obj.dump()));
    }
    return json{{"clusters", list}}.dump();
}

std::string serialize_cluster_choice(std::string_view label) {
    return json{{"cluster", std::string(label)}}.dump();
}

std::string serialize_ranking(const std::vector<std::size_t>& order) { return json{{"ranking", order}}.dump(); }

std::string serialize_score(double score) { return json{{"score", score}}.dump(); }

std::string serialize_cells(PromptShape shape, const std::vector<Cell>& values, const std::vector<std::string>& columns) {
    auto to_json = [](const Cell& c) { return c ? json(*c) : json(nullptr); };
    switch (shape) {
        case PromptShape::ImputeCellOne:
        case PromptShape::ImputeColumnOne: return json{{"value", values.empty() ? json("") : to_json(values[0])}}.dump();
        case PromptShape::ImputeRowOne: {
            nlohmann::ordered_json row = nlohmann::ordered_json::object();
            for (std::size_t i = 0; i < columns.size() && i < values.size(); ++i) {
                row[columns[i]] = values[i] ? nlohmann::ordered_json(*values[i]) : nlohmann::ordered_json(nullptr);
            }
            nlohmann::ordered_json doc;
            doc["row"] = row;
            return doc.dump();
        }
        default: {
            json list = json::array();
            for (const auto& c : values) list.push_back(to_json(c));
            return json{{"values", list}}.dump();
        }
    }
}

}  // namespace lro
