#include "lro/metrics.hpp"

#include "lro/error.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

namespace lro {

std::string canonical(std::string_view text, const CanonOptions& opts) {
    auto t = detail::trim(text);
    return opts.case_fold ? detail::lower(t) : std::string(t);
}

Cell canonical_cell(const Cell& cell, const CanonOptions& opts) {
    if (!cell) return std::nullopt;
    return canonical(*cell, opts);
}

SetMetrics prf(const std::vector<std::string>& pred, const std::vector<std::string>& truth, const CanonOptions& opts) {
    std::set<std::string> p, t;
    for (const auto& x : pred) p.insert(canonical(x, opts));
    for (const auto& x : truth) t.insert(canonical(x, opts));
    if (p.empty() && t.empty()) return {1.0, 1.0, 1.0};
    std::size_t hit = 0;
    for (const auto& x : p) hit += t.count(x);
    SetMetrics m;
    m.precision = p.empty() ? 0.0 : double(hit) / double(p.size());
    m.recall = t.empty() ? 0.0 : double(hit) / double(t.size());
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

double exact_match_ratio(const std::vector<Cell>& pred, const std::vector<Cell>& truth, const CanonOptions& opts) {
    if (pred.size() != truth.size()) {
        fail(ErrorKind::Domain, "exact match needs equal lengths (" + std::to_string(pred.size()) + " vs " +
                                    std::to_string(truth.size()) + ")");
    }
    if (pred.empty()) return 1.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) same += canonical_cell(pred[i], opts) == canonical_cell(truth[i], opts);
    return double(same) / double(pred.size());
}

JudgeResult llm_judge_score(const std::vector<Cell>& pred, const std::vector<Cell>& truth, Gateway& judge,
                            const std::string& task_model, const PromptTemplates& templates,
                            const std::string& context) {
    if (pred.size() != truth.size()) fail(ErrorKind::Domain, "judge score needs equal lengths");
    JudgeResult out;
    out.judge_model = judge.config().model;
    if (out.judge_model == task_model) {
        fail(ErrorKind::Usage, "judge model must differ from the task model ('" + task_model + "')");
    }
    if (pred.empty()) return out;

    std::vector<std::size_t> asked;
    std::vector<ChatRequest> reqs;
    std::size_t same = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (canonical_cell(pred[i]) == canonical_cell(truth[i])) {
            ++same;
            continue;
        }
        PromptPayload p;
        p.element = pred[i] ? *pred[i] : "NULL";
        p.second = truth[i] ? *truth[i] : "NULL";
        reqs.push_back(build_prompt(templates, PromptShape::Judge, p, context, PromptOptions{},
                                    RequestTag{"judge", "ONE", {i}, {}}));
        asked.push_back(i);
    }
    if (!reqs.empty()) {
        const ExpectedShape shape{PromptShape::Judge, 1, 0, {}};
        std::vector<std::size_t> pending(reqs.size());
        for (std::size_t k = 0; k < pending.size(); ++k) pending[k] = k;
        for (int attempt = 0;; ++attempt) {
            std::vector<ChatRequest> batch;
            for (auto k : pending) {
                batch.push_back(reqs[k]);
                if (attempt > 0) batch.back().user += kFormatReminder;
            }
            const auto resp = judge.complete_many(batch);
            out.calls += batch.size();
            std::vector<std::size_t> bad;
            std::string why;
            for (std::size_t j = 0; j < pending.size(); ++j) {
                try {
                    same += std::get<ParsedVerdict>(parse_completion(shape, resp[j].text)).value;
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::MalformedOutput) throw;
                    why = e.what();
                    bad.push_back(pending[j]);
                }
            }
            if (bad.empty()) break;
            if (attempt >= judge.config().malformed_retries) fail(ErrorKind::MalformedOutput, "judge: " + why);
            pending = std::move(bad);
        }
    }
    out.score = double(same) / double(pred.size());
    return out;
}

namespace {

/// Relabels to dense ids in first-appearance order.
std::vector<std::size_t> dense(const Partition& p) {
    std::unordered_map<std::string, std::size_t> ids;
    std::vector<std::size_t> out;
    out.reserve(p.size());
    for (const auto& l : p) out.push_back(ids.emplace(l, ids.size()).first->second);
    return out;
}

struct Contingency {
    std::vector<std::vector<double>> cell;
    std::vector<double> rows, cols;
    double n = 0;
};

Contingency contingency(const Partition& a, const Partition& b) {
    if (a.size() != b.size()) {
        fail(ErrorKind::Domain, "partitions cover different element sets (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + " elements)");
    }
    const auto da = dense(a), db = dense(b);
    const std::size_t ka = da.empty() ? 0 : *std::max_element(da.begin(), da.end()) + 1;
    const std::size_t kb = db.empty() ? 0 : *std::max_element(db.begin(), db.end()) + 1;
    Contingency c;
    c.cell.assign(ka, std::vector<double>(kb, 0.0));
    c.rows.assign(ka, 0.0);
    c.cols.assign(kb, 0.0);
    c.n = double(a.size());
    for (std::size_t i = 0; i < da.size(); ++i) {
        c.cell[da[i]][db[i]] += 1;
        c.rows[da[i]] += 1;
        c.cols[db[i]] += 1;
    }
    return c;
}

double choose2(double x) { return x * (x - 1) / 2; }

}  // namespace

double ari(const Partition& pred, const Partition& truth) {
    const auto c = contingency(pred, truth);
    double index = 0, sa = 0, sb = 0;
    for (const auto& row : c.cell) {
        for (double v : row) index += choose2(v);
    }
    for (double v : c.rows) sa += choose2(v);
    for (double v : c.cols) sb += choose2(v);
    const double total = choose2(c.n);
    const double expected = total == 0 ? 0 : sa * sb / total;
    const double maximum = (sa + sb) / 2;
    if (maximum - expected == 0) return 1.0;
    return (index - expected) / (maximum - expected);
}

double nmi(const Partition& pred, const Partition& truth) {
    const auto c = contingency(pred, truth);
    if (c.n == 0) fail(ErrorKind::Domain, "nmi needs at least one element");
    auto entropy = [&](const std::vector<double>& counts) {
        double h = 0;
        for (double v : counts) {
            if (v > 0) h -= v / c.n * std::log(v / c.n);
        }
        return h;
    };
    const double ha = entropy(c.rows), hb = entropy(c.cols);
    if (ha == 0 && hb == 0) return 1.0;
    double mi = 0;
    for (std::size_t i = 0; i < c.rows.size(); ++i) {
        for (std::size_t j = 0; j < c.cols.size(); ++j) {
            const double v = c.cell[i][j];
            if (v > 0) mi += v / c.n * std::log(v * c.n / (c.rows[i] * c.cols[j]));
        }
    }
    return std::clamp(mi / ((ha + hb) / 2), 0.0, 1.0);
}

namespace {

void check_permutation(const std::vector<std::string>& pred, const std::vector<std::string>& truth, std::size_t k) {
    std::multiset<std::string> a(pred.begin(), pred.end()), b(truth.begin(), truth.end());
    if (a != b) fail(ErrorKind::Domain, "predicted ranking is not a permutation of the ground-truth rows");
    if (std::set<std::string>(truth.begin(), truth.end()).size() != truth.size()) {
        fail(ErrorKind::Domain, "ranking rows must be distinct");
    }
    if (k == 0 || k > truth.size()) {
        fail(ErrorKind::Domain, "cutoff k=" + std::to_string(k) + " outside [1, " + std::to_string(truth.size()) + "]");
    }
}

/// Counts inversions while merge-sorting `v`.
std::size_t inversions(std::vector<std::size_t>& v, std::vector<std::size_t>& tmp, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::size_t inv = inversions(v, tmp, lo, mid) + inversions(v, tmp, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += mid - i;
            tmp[k++] = v[j++];
        } else {
            tmp[k++] = v[i++];
        }
    }
    while (i < mid) tmp[k++] = v[i++];
    while (j < hi) tmp[k++] = v[j++];
    std::copy(tmp.begin() + long(lo), tmp.begin() + long(hi), v.begin() + long(lo));
    return inv;
}

}  // namespace

double hit_rate_at_k(const std::vector<std::string>& pred, const std::vector<std::string>& truth, std::size_t k) {
    check_permutation(pred, truth, k);
    std::set<std::string> top(truth.begin(), truth.begin() + long(k));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) hits += top.count(pred[i]);
    return double(hits) / double(k);
}

double kendall_tau_on_hits(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
                           std::size_t k) {
    check_permutation(pred, truth, k);
    std::map<std::string, std::size_t> truth_pos;
    for (std::size_t i = 0; i < k; ++i) truth_pos[truth[i]] = i;
    // Truth positions of the hits, listed in predicted order.
    std::vector<std::size_t> seq;
    for (std::size_t i = 0; i < k; ++i) {
        if (auto it = truth_pos.find(pred[i]); it != truth_pos.end()) seq.push_back(it->second);
    }
    const std::size_t h = seq.size();
    if (h <= 1) return 1.0;
    std::vector<std::size_t> tmp(h);
    const double pairs = double(h) * double(h - 1) / 2;
    const double disc = double(inversions(seq, tmp, 0, h));
    return (pairs - 2 * disc) / pairs;
}

bool table_exact_match(const Relation& pred, const Relation& truth, bool order_sensitive, const CanonOptions& opts) {
    if (pred.column_count() != truth.column_count() || pred.row_count() != truth.row_count()) return false;
    for (std::size_t c = 0; c < pred.column_count(); ++c) {
        if (canonical(pred.columns()[c], opts) != canonical(truth.columns()[c], opts)) return false;
    }
    auto canon_rows = [&](const Relation& r) {
        std::vector<Row> rows;
        for (const auto& row : r.rows()) {
            Row out;
            for (const auto& cell : row) out.push_back(canonical_cell(cell, opts));
            rows.push_back(std::move(out));
        }
        return rows;
    };
    auto a = canon_rows(pred), b = canon_rows(truth);
    if (!order_sensitive) {
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
    }
    return a == b;
}

std::vector<std::string> row_keys(const Relation& r) {
    std::vector<std::string> out;
    for (const auto& row : r.rows()) {
        std::string key;
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) key += '\x1f';
            key += row[c] ? *row[c] : std::string("\x1e");
        }
        out.push_back(std::move(key));
    }
    return out;
}

}  // namespace lro
