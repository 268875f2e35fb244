#pragma once

// Scenario configuration files.
//
// Grammar (a TOML subset):
//
//   document := { line }
//   line     := ws [ section | assignment ] ws [ '#' comment ]
//   section  := '[' name ']'
//   assignment := key ws '=' ws value       (arrays may continue over lines)
//   value    := number | 'true' | 'false' | '"' chars '"' | bareword | array
//   array    := '[' [ value { ',' value } [','] ] ']'
//
// Matrices are arrays of rows ([[1, 0.05], [0, 1]]); a bare number is a 1x1
// matrix. Vectors are flat arrays. Unknown sections and keys are rejected,
// except inside [meta], which holds free-form string annotations.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ofcbf/montecarlo.hpp"

namespace ofcbf::config {

struct Value {
    enum class Kind { Number, Bool, String, List };
    Kind kind = Kind::Number;
    double number = 0.0;
    bool boolean = false;
    std::string text;
    std::vector<Value> items;
};

struct Entry {
    Value value;
    int line = 0;
};

struct Document {
    std::map<std::string, std::map<std::string, Entry>> sections;
    std::map<std::string, int> section_lines;

    const Entry* find(const std::string& section, const std::string& key) const {
        auto s = sections.find(section);
        if (s == sections.end()) return nullptr;
        auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    }
};

class ParseError : public ConfigError {
public:
    ParseError(int line, const std::string& msg)
        : ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg) {}
};

namespace detail {

class ValueParser {
public:
    ValueParser(std::string_view text, int line) : s_(text), line_(line) {}

    Value parse_all() {
        Value v = parse();
        skip_ws();
        if (pos_ != s_.size()) fail("unexpected trailing characters '" + std::string(s_.substr(pos_)) + "'");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, msg); }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' ||
                                    s_[pos_] == '\r')) {
            ++pos_;
        }
    }

    Value parse() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '[') return parse_list();
        if (c == '"') return parse_string();
        return parse_scalar();
    }

    Value parse_list() {
        Value v;
        v.kind = Value::Kind::List;
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return v;
        }
        while (true) {
            v.items.push_back(parse());
            skip_ws();
            if (pos_ >= s_.size()) fail("unterminated array");
            if (s_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ']') {
                    ++pos_;
                    return v;
                }
                continue;
            }
            if (s_[pos_] == ']') {
                ++pos_;
                return v;
            }
            fail("expected ',' or ']' in array");
        }
    }

    Value parse_string() {
        Value v;
        v.kind = Value::Kind::String;
        ++pos_;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
            v.text.push_back(s_[pos_++]);
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return v;
    }

    Value parse_scalar() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != ' ' &&
               s_[pos_] != '\t' && s_[pos_] != '\n' && s_[pos_] != '\r') {
            ++pos_;
        }
        const std::string_view tok = s_.substr(start, pos_ - start);
        if (tok.empty()) fail("missing value");
        Value v;
        if (tok == "true" || tok == "false") {
            v.kind = Value::Kind::Bool;
            v.boolean = tok == "true";
            return v;
        }
        double d = 0.0;
        const char* first = tok.data();
        const char* last = tok.data() + tok.size();
        if (*first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, d);
        if (ec == std::errc() && ptr == last) {
            v.number = d;
            return v;
        }
        const auto word_char = [](char ch) {
            return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' ||
                   ch == '.';
        };
        if (!std::isalpha(static_cast<unsigned char>(tok.front()))) {
            fail("malformed number '" + std::string(tok) + "'");
        }
        for (char ch : tok) {
            if (!word_char(ch)) fail("malformed value '" + std::string(tok) + "'");
        }
        v.kind = Value::Kind::String;
        v.text = std::string(tok);
        return v;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    int line_;
};

inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int bracket_balance(const std::string& s) {
    int depth = 0;
    bool in_str = false;
    for (char c : s) {
        if (c == '"') in_str = !in_str;
        if (in_str) continue;
        if (c == '[') ++depth;
        if (c == ']') --depth;
    }
    return depth;
}

}  // namespace detail

inline Value parse_value(std::string_view text, int line = 0) {
    return detail::ValueParser(text, line).parse_all();
}

inline Document parse_document(const std::string& text) {
    Document doc;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = detail::trim(detail::strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[' && line.find('=') == std::string::npos) {
            if (line.back() != ']') throw ParseError(lineno, "malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ParseError(lineno, "empty section name");
            if (doc.section_lines.count(section)) {
                throw ParseError(lineno, "duplicate section [" + section + "]");
            }
            doc.section_lines[section] = lineno;
            doc.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value'");
        if (section.empty()) throw ParseError(lineno, "assignment outside of a section");
        const std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(lineno, "missing key");
        const int start = lineno;
        while (detail::bracket_balance(value) > 0) {
            if (!std::getline(in, raw)) throw ParseError(start, "unterminated array");
            ++lineno;
            value += " " + detail::trim(detail::strip_comment(raw));
        }
        auto& sec = doc.sections[section];
        if (sec.count(key)) throw ParseError(start, "duplicate key '" + key + "'");
        sec[key] = Entry{parse_value(value, start), start};
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Schema

enum class GridMode { Lattice };

struct SweepSpec {
    std::vector<double> alphas;
    std::vector<double> k_Js;
};

// Per-axis lattice [lo, hi, count].
struct GridSpec {
    std::vector<std::array<double, 3>> axes;

    std::vector<Vector> points() const {
        std::vector<Vector> pts;
        if (axes.empty()) return pts;
        std::vector<std::size_t> idx(axes.size(), 0);
        while (true) {
            Vector x(static_cast<Eigen::Index>(axes.size()));
            for (std::size_t d = 0; d < axes.size(); ++d) {
                const auto& ax = axes[d];
                const auto count = static_cast<std::size_t>(ax[2]);
                x(static_cast<Eigen::Index>(d)) =
                    count <= 1 ? ax[0]
                               : ax[0] + (ax[1] - ax[0]) * static_cast<double>(idx[d]) /
                                             static_cast<double>(count - 1);
            }
            pts.push_back(x);
            std::size_t d = 0;
            for (; d < axes.size(); ++d) {
                if (++idx[d] < static_cast<std::size_t>(axes[d][2])) break;
                idx[d] = 0;
            }
            if (d == axes.size()) break;
        }
        return pts;
    }
};

struct ScenarioConfig {
    Scenario scenario;
    std::size_t trials = 100;
    std::uint64_t master_seed = 42;
    bool log_trajectories = false;
    SweepSpec sweep;
    GridSpec grid;
    std::map<std::string, std::string> meta;
};

namespace detail {

using ofcbf::detail::require;

inline const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"system", {"A", "B", "C", "Q", "R", "P0"}},
        {"barrier", {"kind", "a", "b", "c0", "W", "center", "fallback_M"}},
        {"nominal", {"kind", "gain", "target", "offset", "Q_lqr", "R_lqr"}},
        {"safety",
         {"alpha", "k_J", "cj_abs", "sigma", "mode", "infeasible_policy", "gamma_mode", "gamma",
          "gamma_draws", "gamma_seed", "input_box", "h_gamma_samples", "h_gamma_iterations",
          "h_gamma_step", "h_gamma_seed"}},
        {"run", {"name", "T", "trials", "master_seed", "x0", "xhat0", "log_trajectories"}},
        {"sweep", {"alpha", "k_J"}},
        {"grid", {"x1", "x2", "x3", "x4", "x5", "x6"}},
        {"meta", {}},
    };
    return s;
}

inline void check_schema(const Document& doc) {
    for (const auto& [sec, keys] : doc.sections) {
        auto it = schema().find(sec);
        if (it == schema().end()) {
            throw ParseError(doc.section_lines.count(sec) ? doc.section_lines.at(sec) : 0,
                             "unknown section [" + sec + "]");
        }
        if (sec == "meta") {
            for (const auto& [k, e] : keys) {
                if (e.value.kind != Value::Kind::String) {
                    throw ParseError(e.line, "meta." + k + " must be a string");
                }
            }
            continue;
        }
        for (const auto& [k, e] : keys) {
            if (!it->second.count(k)) throw ParseError(e.line, "unknown key '" + sec + "." + k + "'");
        }
    }
}

class Reader {
public:
    explicit Reader(const Document& doc) : doc_(doc) {}

    const Entry* find(const std::string& sec, const std::string& key) const {
        return doc_.find(sec, key);
    }

    const Entry& need(const std::string& sec, const std::string& key) const {
        const Entry* e = find(sec, key);
        if (!e) throw ParseError(0, "missing required key '" + sec + "." + key + "'");
        return *e;
    }

    static double number(const Entry& e, const std::string& name) {
        if (e.value.kind != Value::Kind::Number) throw ParseError(e.line, name + " must be a number");
        return e.value.number;
    }

    static std::string word(const Entry& e, const std::string& name) {
        if (e.value.kind != Value::Kind::String) throw ParseError(e.line, name + " must be a string");
        return e.value.text;
    }

    static bool boolean(const Entry& e, const std::string& name) {
        if (e.value.kind != Value::Kind::Bool) throw ParseError(e.line, name + " must be true or false");
        return e.value.boolean;
    }

    static std::vector<double> numbers(const Value& v, int line, const std::string& name) {
        if (v.kind == Value::Kind::Number) return {v.number};
        if (v.kind != Value::Kind::List) throw ParseError(line, name + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& it : v.items) {
            if (it.kind != Value::Kind::Number) throw ParseError(line, name + " must contain only numbers");
            out.push_back(it.number);
        }
        return out;
    }

    static Vector vector(const Entry& e, const std::string& name) {
        const auto xs = numbers(e.value, e.line, name);
        return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    }

    static Matrix matrix(const Entry& e, const std::string& name) {
        const Value& v = e.value;
        if (v.kind == Value::Kind::Number) return Matrix::Constant(1, 1, v.number);
        if (v.kind != Value::Kind::List || v.items.empty()) {
            throw ParseError(e.line, name + " must be a number or an array of rows");
        }
        std::vector<std::vector<double>> rows;
        for (const auto& r : v.items) {
            if (r.kind != Value::Kind::List) {
                throw ParseError(e.line, name + " must be an array of rows, e.g. [[1, 0], [0, 1]]");
            }
            rows.push_back(numbers(r, e.line, name));
        }
        const std::size_t cols = rows.front().size();
        Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != cols) {
                throw ParseError(e.line, name + " has ragged rows (row " + std::to_string(i + 1) +
                                             " has " + std::to_string(rows[i].size()) +
                                             " entries, expected " + std::to_string(cols) + ")");
            }
            for (std::size_t j = 0; j < cols; ++j) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            }
        }
        return m;
    }

private:
    const Document& doc_;
};

inline void expect_shape(const Matrix& m, Eigen::Index r, Eigen::Index c, const Entry& e,
                         const std::string& name) {
    if (m.rows() != r || m.cols() != c) {
        throw ParseError(e.line, name + " must be " + std::to_string(r) + "x" + std::to_string(c) +
                                     ", got " + std::to_string(m.rows()) + "x" +
                                     std::to_string(m.cols()));
    }
}

inline std::uint64_t seed_value(const Entry& e, const std::string& name) {
    const double d = Reader::number(e, name);
    if (d < 0 || d != std::floor(d) || d > 9007199254740992.0) {
        throw ParseError(e.line, name + " must be a nonnegative integer below 2^53");
    }
    return static_cast<std::uint64_t>(d);
}

inline std::size_t count_value(const Entry& e, const std::string& name, double min) {
    const double d = Reader::number(e, name);
    if (d < min || d != std::floor(d) || d > 1e12) {
        throw ParseError(e.line, name + " must be an integer >= " + std::to_string(static_cast<long long>(min)));
    }
    return static_cast<std::size_t>(d);
}

}  // namespace detail

inline ScenarioConfig build(const Document& doc) {
    detail::check_schema(doc);
    const detail::Reader rd(doc);
    using R = detail::Reader;
    ScenarioConfig cfg;
    Scenario& s = cfg.scenario;

    // [system]
    const auto& eA = rd.need("system", "A");
    const Matrix A = R::matrix(eA, "system.A");
    if (A.rows() != A.cols()) {
        throw ParseError(eA.line, "system.A must be square, got " + std::to_string(A.rows()) +
                                      "x" + std::to_string(A.cols()));
    }
    const auto n = A.rows();
    const auto& eB = rd.need("system", "B");
    const Matrix B = R::matrix(eB, "system.B");
    if (B.rows() != n) {
        throw ParseError(eB.line, "system.B must have " + std::to_string(n) + " rows, got " +
                                      std::to_string(B.rows()));
    }
    const auto& eC = rd.need("system", "C");
    const Matrix C = R::matrix(eC, "system.C");
    if (C.cols() != n) {
        throw ParseError(eC.line, "system.C must have " + std::to_string(n) + " columns, got " +
                                      std::to_string(C.cols()));
    }
    const auto& eQ = rd.need("system", "Q");
    const Matrix Q = R::matrix(eQ, "system.Q");
    detail::expect_shape(Q, n, n, eQ, "system.Q");
    const auto& eR = rd.need("system", "R");
    const Matrix Rm = R::matrix(eR, "system.R");
    detail::expect_shape(Rm, C.rows(), C.rows(), eR, "system.R");
    s.sys = LinearSystem{A, B, C, Q, Rm};
    if (const Entry* e = rd.find("system", "P0")) {
        s.P0 = R::matrix(*e, "system.P0");
        detail::expect_shape(s.P0, n, n, *e, "system.P0");
    } else {
        s.P0 = Q;
    }

    // [barrier]
    const auto& eKind = rd.need("barrier", "kind");
    const std::string kind = R::word(eKind, "barrier.kind");
    if (kind == "halfspace") {
        const auto& ea = rd.need("barrier", "a");
        HalfSpace hs{R::vector(ea, "barrier.a"), R::number(rd.need("barrier", "b"), "barrier.b")};
        if (hs.a.size() != n) throw ParseError(ea.line, "barrier.a must have " + std::to_string(n) + " entries");
        s.barrier = hs;
    } else if (kind == "quadratic") {
        const auto& eW = rd.need("barrier", "W");
        ConcaveQuadratic q;
        q.c0 = R::number(rd.need("barrier", "c0"), "barrier.c0");
        q.W = R::matrix(eW, "barrier.W");
        detail::expect_shape(q.W, n, n, eW, "barrier.W");
        if (const Entry* e = rd.find("barrier", "center")) {
            q.center = R::vector(*e, "barrier.center");
            if (q.center.size() != n) throw ParseError(e->line, "barrier.center must have " + std::to_string(n) + " entries");
        } else {
            q.center = Vector::Zero(n);
        }
        s.barrier = q;
    } else {
        throw ParseError(eKind.line, "barrier.kind must be 'halfspace' or 'quadratic'");
    }
    if (const Entry* e = rd.find("barrier", "fallback_M")) s.fallback_M = R::number(*e, "barrier.fallback_M");

    // [nominal]
    const auto& eNk = rd.need("nominal", "kind");
    const std::string nk = R::word(eNk, "nominal.kind");
    Vector target = Vector::Zero(n);
    if (const Entry* e = rd.find("nominal", "target")) {
        target = R::vector(*e, "nominal.target");
        if (target.size() != n) throw ParseError(e->line, "nominal.target must have " + std::to_string(n) + " entries");
    }
    if (nk == "static") {
        const auto& eg = rd.need("nominal", "gain");
        StaticGain g{R::matrix(eg, "nominal.gain"), target, Vector::Zero(B.cols())};
        detail::expect_shape(g.K_fb, B.cols(), n, eg, "nominal.gain");
        if (const Entry* e = rd.find("nominal", "offset")) {
            g.offset = R::vector(*e, "nominal.offset");
            if (g.offset.size() != B.cols()) throw ParseError(e->line, "nominal.offset must have " + std::to_string(B.cols()) + " entries");
        }
        s.nominal = g;
    } else if (nk == "lqr") {
        const auto& eq = rd.need("nominal", "Q_lqr");
        const auto& er = rd.need("nominal", "R_lqr");
        LqrWeights w{R::matrix(eq, "nominal.Q_lqr"), R::matrix(er, "nominal.R_lqr"), target};
        detail::expect_shape(w.Q_lqr, n, n, eq, "nominal.Q_lqr");
        detail::expect_shape(w.R_lqr, B.cols(), B.cols(), er, "nominal.R_lqr");
        s.nominal = w;
    } else {
        throw ParseError(eNk.line, "nominal.kind must be 'static' or 'lqr'");
    }

    // [safety]
    auto& p = s.params;
    p.alpha = R::number(rd.need("safety", "alpha"), "safety.alpha");
    const Entry* ekj = rd.find("safety", "k_J");
    const Entry* ecj = rd.find("safety", "cj_abs");
    if (ekj && ecj) throw ParseError(ecj->line, "set only one of safety.k_J and safety.cj_abs");
    if (!ekj && !ecj) throw ParseError(0, "missing required key 'safety.k_J' (or 'safety.cj_abs')");
    if (ekj) p.cj = CjFraction{R::number(*ekj, "safety.k_J")};
    else p.cj = CjAbsolute{R::number(*ecj, "safety.cj_abs")};
    if (const Entry* e = rd.find("safety", "sigma")) p.sigma = R::number(*e, "safety.sigma");
    if (const Entry* e = rd.find("safety", "mode")) {
        const auto m = R::word(*e, "safety.mode");
        if (m == "output") p.mode = FeedbackMode::OutputFeedback;
        else if (m == "state") p.mode = FeedbackMode::StateFeedback;
        else throw ParseError(e->line, "safety.mode must be 'output' or 'state'");
    }
    if (const Entry* e = rd.find("safety", "infeasible_policy")) {
        const auto m = R::word(*e, "safety.infeasible_policy");
        if (m == "least_violation") p.infeasible_policy = InfeasiblePolicy::LeastViolation;
        else if (m == "nominal") p.infeasible_policy = InfeasiblePolicy::Nominal;
        else if (m == "fail") p.infeasible_policy = InfeasiblePolicy::Fail;
        else throw ParseError(e->line, "safety.infeasible_policy must be least_violation, nominal or fail");
    }
    if (const Entry* e = rd.find("safety", "input_box")) p.input_box = R::number(*e, "safety.input_box");
    const Entry* egm = rd.find("safety", "gamma_mode");
    const std::string gm = egm ? R::word(*egm, "safety.gamma_mode") : "montecarlo";
    const Entry* eg = rd.find("safety", "gamma");
    if (gm == "analytic") {
        s.gamma_mode = GammaMode::Analytic;
    } else if (gm == "montecarlo") {
        s.gamma_mode = GammaMode::MonteCarlo;
    } else if (gm == "fixed") {
        if (!eg) throw ParseError(egm->line, "gamma_mode = fixed requires safety.gamma");
        s.gamma_override = R::number(*eg, "safety.gamma");
    } else {
        throw ParseError(egm->line, "safety.gamma_mode must be analytic, montecarlo or fixed");
    }
    if (eg && gm != "fixed") throw ParseError(eg->line, "safety.gamma is only used with gamma_mode = fixed");
    if (const Entry* e = rd.find("safety", "gamma_draws")) s.gamma_calibration.draws = detail::count_value(*e, "safety.gamma_draws", 1);
    if (const Entry* e = rd.find("safety", "gamma_seed")) s.gamma_calibration.seed = detail::seed_value(*e, "safety.gamma_seed");
    if (const Entry* e = rd.find("safety", "h_gamma_samples")) s.h_gamma_options.samples = detail::count_value(*e, "safety.h_gamma_samples", 1);
    if (const Entry* e = rd.find("safety", "h_gamma_iterations")) s.h_gamma_options.iterations = static_cast<int>(detail::count_value(*e, "safety.h_gamma_iterations", 0));
    if (const Entry* e = rd.find("safety", "h_gamma_step")) s.h_gamma_options.step_fraction = R::number(*e, "safety.h_gamma_step");
    if (const Entry* e = rd.find("safety", "h_gamma_seed")) s.h_gamma_options.seed = detail::seed_value(*e, "safety.h_gamma_seed");

    // [run]
    if (const Entry* e = rd.find("run", "name")) s.name = R::word(*e, "run.name");
    if (const Entry* e = rd.find("run", "T")) s.horizon = detail::count_value(*e, "run.T", 1);
    if (const Entry* e = rd.find("run", "trials")) cfg.trials = detail::count_value(*e, "run.trials", 1);
    if (const Entry* e = rd.find("run", "master_seed")) cfg.master_seed = detail::seed_value(*e, "run.master_seed");
    const auto& ex0 = rd.need("run", "x0");
    s.x0 = R::vector(ex0, "run.x0");
    if (s.x0.size() != n) throw ParseError(ex0.line, "run.x0 must have " + std::to_string(n) + " entries");
    if (const Entry* e = rd.find("run", "xhat0")) {
        s.xhat0 = R::vector(*e, "run.xhat0");
        if (s.xhat0->size() != n) throw ParseError(e->line, "run.xhat0 must have " + std::to_string(n) + " entries");
    }
    if (const Entry* e = rd.find("run", "log_trajectories")) cfg.log_trajectories = R::boolean(*e, "run.log_trajectories");

    // [sweep]
    if (const Entry* e = rd.find("sweep", "alpha")) cfg.sweep.alphas = R::numbers(e->value, e->line, "sweep.alpha");
    if (const Entry* e = rd.find("sweep", "k_J")) cfg.sweep.k_Js = R::numbers(e->value, e->line, "sweep.k_J");

    // [grid]
    for (Eigen::Index d = 0; d < n && d < 6; ++d) {
        const std::string key = "x" + std::to_string(d + 1);
        const Entry* e = rd.find("grid", key);
        if (!e) break;
        const auto xs = R::numbers(e->value, e->line, "grid." + key);
        if (xs.size() != 3 || xs[2] < 1 || xs[2] != std::floor(xs[2])) {
            throw ParseError(e->line, "grid." + key + " must be [lo, hi, count] with integer count >= 1");
        }
        cfg.grid.axes.push_back({xs[0], xs[1], xs[2]});
    }
    if (!cfg.grid.axes.empty() && static_cast<Eigen::Index>(cfg.grid.axes.size()) != n) {
        throw ParseError(doc.section_lines.count("grid") ? doc.section_lines.at("grid") : 0,
                         "grid needs one axis per state (x1..x" + std::to_string(n) + ")");
    }

    if (auto it = doc.sections.find("meta"); it != doc.sections.end()) {
        for (const auto& [k, e] : it->second) cfg.meta[k] = e.value.text;
    }

    s.validate();
    return cfg;
}

// Applies a dotted-path override such as "safety.k_J=0.38".
inline void apply_override(Document& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ParseError(0, "override '" + assignment + "' must be key=value");
    const std::string path = detail::trim(assignment.substr(0, eq));
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size()) {
        throw ParseError(0, "override key '" + path + "' must be section.key");
    }
    const std::string sec = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    Value v = parse_value(detail::trim(assignment.substr(eq + 1)), 0);
    auto& section = doc.sections[sec];
    if (!doc.section_lines.count(sec)) doc.section_lines[sec] = 0;
    if (sec == "safety" && key == "k_J") section.erase("cj_abs");
    if (sec == "safety" && key == "cj_abs") section.erase("k_J");
    if (sec == "safety" && key == "gamma") section["gamma_mode"] = Entry{parse_value("fixed"), 0};
    section[key] = Entry{std::move(v), 0};
}

// ---------------------------------------------------------------------------
// Serialization

// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string format_vector(const Vector& v) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        s += format_number(v(i));
    }
    return s + "]";
}

inline std::string format_matrix(const Matrix& m) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i) s += ", ";
        s += format_vector(m.row(i).transpose());
    }
    return s + "]";
}

inline std::string format_list(const std::vector<double>& xs) {
    return format_vector(Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size())));
}

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

inline std::string to_text(const ScenarioConfig& cfg) {
    const Scenario& s = cfg.scenario;
    detail::require(s.sys.A.is_constant() && s.sys.B.is_constant() && s.sys.C.is_constant() &&
                        s.sys.Q.is_constant() && s.sys.R.is_constant(),
                    "only constant systems can be written as configuration text");
    std::ostringstream o;
    o << "[system]\n";
    o << "A = " << format_matrix(s.sys.A.at(0)) << "\n";
    o << "B = " << format_matrix(s.sys.B.at(0)) << "\n";
    o << "C = " << format_matrix(s.sys.C.at(0)) << "\n";
    o << "Q = " << format_matrix(s.sys.Q.at(0)) << "\n";
    o << "R = " << format_matrix(s.sys.R.at(0)) << "\n";
    o << "P0 = " << format_matrix(s.P0) << "\n\n";

    o << "[barrier]\n";
    if (const auto* hs = s.barrier.as<HalfSpace>()) {
        o << "kind = \"halfspace\"\n";
        o << "a = " << format_vector(hs->a) << "\n";
        o << "b = " << format_number(hs->b) << "\n";
    } else if (const auto* q = s.barrier.as<ConcaveQuadratic>()) {
        o << "kind = \"quadratic\"\n";
        o << "c0 = " << format_number(q->c0) << "\n";
        o << "W = " << format_matrix(q->W) << "\n";
        o << "center = " << format_vector(q->center) << "\n";
    } else {
        throw ConfigError("generic barriers cannot be written as configuration text");
    }
    if (s.fallback_M) o << "fallback_M = " << format_number(*s.fallback_M) << "\n";
    o << "\n[nominal]\n";
    if (const auto* g = std::get_if<StaticGain>(&s.nominal.spec())) {
        o << "kind = \"static\"\n";
        o << "gain = " << format_matrix(g->K_fb) << "\n";
        if (g->target.size()) o << "target = " << format_vector(g->target) << "\n";
        if (g->offset.size()) o << "offset = " << format_vector(g->offset) << "\n";
    } else {
        const auto& w = std::get<LqrWeights>(s.nominal.spec());
        o << "kind = \"lqr\"\n";
        o << "Q_lqr = " << format_matrix(w.Q_lqr) << "\n";
        o << "R_lqr = " << format_matrix(w.R_lqr) << "\n";
        if (w.target.size()) o << "target = " << format_vector(w.target) << "\n";
    }

    const auto& p = s.params;
    o << "\n[safety]\n";
    o << "alpha = " << format_number(p.alpha) << "\n";
    if (const auto* f = std::get_if<CjFraction>(&p.cj)) o << "k_J = " << format_number(f->k_J) << "\n";
    else o << "cj_abs = " << format_number(std::get<CjAbsolute>(p.cj).value) << "\n";
    o << "sigma = " << format_number(p.sigma) << "\n";
    o << "mode = \"" << (p.mode == FeedbackMode::OutputFeedback ? "output" : "state") << "\"\n";
    o << "infeasible_policy = \""
      << (p.infeasible_policy == InfeasiblePolicy::LeastViolation ? "least_violation"
          : p.infeasible_policy == InfeasiblePolicy::Nominal      ? "nominal"
                                                                  : "fail")
      << "\"\n";
    o << "input_box = " << format_number(p.input_box) << "\n";
    if (s.gamma_override) {
        o << "gamma_mode = \"fixed\"\n";
        o << "gamma = " << format_number(*s.gamma_override) << "\n";
    } else {
        o << "gamma_mode = \"" << (s.gamma_mode == GammaMode::Analytic ? "analytic" : "montecarlo")
          << "\"\n";
    }
    o << "gamma_draws = " << s.gamma_calibration.draws << "\n";
    o << "gamma_seed = " << s.gamma_calibration.seed << "\n";
    o << "h_gamma_samples = " << s.h_gamma_options.samples << "\n";
    o << "h_gamma_iterations = " << s.h_gamma_options.iterations << "\n";
    o << "h_gamma_step = " << format_number(s.h_gamma_options.step_fraction) << "\n";
    o << "h_gamma_seed = " << s.h_gamma_options.seed << "\n";

    o << "\n[run]\n";
    o << "name = " << quote(s.name) << "\n";
    o << "T = " << s.horizon << "\n";
    o << "trials = " << cfg.trials << "\n";
    o << "master_seed = " << cfg.master_seed << "\n";
    o << "x0 = " << format_vector(s.x0) << "\n";
    if (s.xhat0) o << "xhat0 = " << format_vector(*s.xhat0) << "\n";
    o << "log_trajectories = " << (cfg.log_trajectories ? "true" : "false") << "\n";

    if (!cfg.sweep.alphas.empty() || !cfg.sweep.k_Js.empty()) {
        o << "\n[sweep]\n";
        if (!cfg.sweep.alphas.empty()) o << "alpha = " << format_list(cfg.sweep.alphas) << "\n";
        if (!cfg.sweep.k_Js.empty()) o << "k_J = " << format_list(cfg.sweep.k_Js) << "\n";
    }
    if (!cfg.grid.axes.empty()) {
        o << "\n[grid]\n";
        for (std::size_t d = 0; d < cfg.grid.axes.size(); ++d) {
            const auto& ax = cfg.grid.axes[d];
            o << "x" << d + 1 << " = " << format_list({ax[0], ax[1], ax[2]}) << "\n";
        }
    }
    if (!cfg.meta.empty()) {
        o << "\n[meta]\n";
        for (const auto& [k, v] : cfg.meta) o << k << " = " << quote(v) << "\n";
    }
    return o.str();
}

// ---------------------------------------------------------------------------
// Built-in scenarios

namespace detail {

inline std::string halfplane_text() {
    return R"cfg([system]
A = [[1, 0.05], [0, 1]]
B = [[0.0125], [0.05]]
C = [[0, 1]]
Q = [[7.66e-5, 3.06e-3], [3.06e-3, 1.23e-1]]
R = 0.09
P0 = [[7.66e-5, 3.06e-3], [3.06e-3, 1.23e-1]]

[barrier]
kind = "halfspace"
a = [0.4, 0.4]
b = 1
fallback_M = 10

[nominal]
kind = "static"
gain = [[15, 5]]
target = [0, 0]

[safety]
alpha = 0.7
k_J = 0.115
sigma = 0.05
mode = "output"
infeasible_policy = "least_violation"
gamma_mode = "fixed"
gamma = 0.1

[run]
name = "halfplane"
T = 100
trials = 100
master_seed = 42
x0 = [7, 0]

[sweep]
alpha = [0.7]
k_J = [0.05, 0.06, 0.07, 0.08, 0.09, 0.1, 0.11, 0.115, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17, 0.18, 0.19, 0.2, 0.21, 0.22, 0.23, 0.24, 0.25, 0.26, 0.27, 0.28, 0.29, 0.3]

[meta]
source = "double integrator with velocity measurement, half-plane safe set"
gamma_note = "fixed gamma = 0.1; the nominal-CBF baseline (k_J = 0) then stays below 0.1 safe"
)cfg";
}

inline std::string ellipsoid_text() {
    return R"cfg([system]
A = [[1, 0.05], [0, 1]]
B = [[0.0125], [0.05]]
C = [[0, 1]]
Q = [[0.03, 0.03], [0.03, 0.03]]
R = 0.09
P0 = [[0.03, 0.03], [0.03, 0.03]]

[barrier]
kind = "quadratic"
c0 = 0.8
W = [[0.0069444444444444441, 0], [0, 0.0625]]
center = [0, 0]

[nominal]
kind = "lqr"
Q_lqr = [[1, 0], [0, 0.5]]
R_lqr = 0.1
target = [-5, 0]

[safety]
alpha = 0.52
k_J = 0.38
sigma = 0.05
mode = "output"
infeasible_policy = "least_violation"
gamma_mode = "fixed"
gamma = 0.1

[run]
name = "ellipsoid"
T = 100
trials = 100
master_seed = 42
x0 = [5, 0]

[sweep]
alpha = [0.3, 0.45, 0.5, 0.52, 0.6, 0.8]
k_J = [0.258, 0.31, 0.353, 0.38, 0.44, 0.7]

[meta]
source = "double integrator with velocity measurement, ellipsoidal safe set, LQR to x_g = (-5, 0)"
)cfg";
}

// Linearized inverted pendulum, x = (theta, theta_dot), sampled at dt.
inline std::string pendulum_text(bool output, double dt) {
    const double pi = std::numbers::pi;
    const double s = 36.0 / (pi * pi);
    const double off = s / std::sqrt(3.0);
    const double q1 = 0.005 * 0.005, q2 = 0.025 * 0.025, r = 0.005 * 0.005;
    // Jensen constant of the state-feedback design: lambda_max/2 tr(cov w).
    const double lam = 2.0 * s * (1.0 + 1.0 / std::sqrt(3.0));
    const double cJ = 0.5 * lam * (q1 + q2);
    std::ostringstream o;
    o << "[system]\n"
      << "A = " << format_matrix((Matrix(2, 2) << 1, dt, dt, 1).finished()) << "\n"
      << "B = " << format_matrix((Matrix(2, 1) << 0, dt).finished()) << "\n"
      << "C = [[1, 0]]\n"
      << "Q = " << format_matrix((Matrix(2, 2) << q1, 0, 0, q2).finished()) << "\n"
      << "R = " << format_number(r) << "\n"
      << "P0 = " << format_matrix((Matrix(2, 2) << q1, 0, 0, q2).finished()) << "\n\n"
      << "[barrier]\n"
      << "kind = \"quadratic\"\n"
      << "c0 = 1\n"
      << "W = " << format_matrix((Matrix(2, 2) << s, off, off, s).finished()) << "\n"
      << "center = [0, 0]\n\n"
      << "[nominal]\n"
      << "kind = \"lqr\"\n"
      << "Q_lqr = [[12, 0], [0, 1]]\n"
      << "R_lqr = 0.2\n"
      << "target = [0, 0]\n\n"
      << "[safety]\n"
      << "alpha = " << format_number(1.0 - cJ) << "\n";
    if (output) {
        o << "k_J = 0.2\n"
          << "sigma = 0.05\n"
          << "mode = \"output\"\n"
          << "gamma_mode = \"montecarlo\"\n";
    } else {
        o << "cj_abs = " << format_number(cJ) << "\n"
          << "sigma = 0.05\n"
          << "mode = \"state\"\n";
    }
    o << "infeasible_policy = \"least_violation\"\n\n"
      << "[run]\n"
      << "name = \"" << (output ? "pendulum_output" : "pendulum_state") << "\"\n"
      << "T = 100\n"
      << "trials = 100\n"
      << "master_seed = 42\n"
      << "x0 = [0, 0]\n\n"
      << "[grid]\n"
      << "x1 = " << format_list({-pi / 6, pi / 6, 15}) << "\n"
      << "x2 = [-0.65, 0.65, 15]\n\n"
      << "[meta]\n"
      << "dt = \"" << format_number(dt) << "\"\n"
      << "source = \"inverted pendulum linearized about upright, sin(theta) ~ theta\"\n"
      << "alpha_rule = \"alpha = 1 - lambda_max/2 tr(cov w)\"\n";
    return o.str();
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
    return {"halfplane", "ellipsoid", "pendulum_output", "pendulum_state"};
}

inline std::string preset_text(const std::string& name) {
    if (name == "halfplane") return detail::halfplane_text();
    if (name == "ellipsoid") return detail::ellipsoid_text();
    if (name == "pendulum_output") return detail::pendulum_text(true, 0.01);
    if (name == "pendulum_state") return detail::pendulum_text(false, 0.01);
    throw ConfigError("unknown preset '" + name +
                      "' (known: halfplane, ellipsoid, pendulum_output, pendulum_state)");
}

inline Document load_document(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_document(ss.str());
}

inline ScenarioConfig parse_config(const std::string& path) { return build(load_document(path)); }

inline ScenarioConfig load_preset(const std::string& name) {
    return build(parse_document(preset_text(name)));
}

}  // namespace ofcbf::config
