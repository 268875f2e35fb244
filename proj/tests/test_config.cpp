#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "ofcbf/config.hpp"

using namespace ofcbf;
using namespace ofcbf::config;

namespace {

const char* kMinimal = R"([system]
A = [[1, 0.1], [0, 1]]
B = [[0], [0.1]]
C = [[1, 0]]
Q = [[0.01, 0], [0, 0.01]]
R = 0.04

[barrier]
kind = "quadratic"
c0 = 1
W = [[1, 0], [0, 1]]

[nominal]
kind = "static"
gain = [[1, 1]]

[safety]
alpha = 0.5
k_J = 0.2

[run]
T = 10
x0 = [0, 0]
)";

std::string replace_line(std::string text, const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    return text.replace(pos, from.size(), to);
}

std::string error_of(const std::string& text) {
    try {
        build(parse_document(text));
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

void expect_same_scenario(const ScenarioConfig& a, const ScenarioConfig& b) {
    const auto& x = a.scenario;
    const auto& y = b.scenario;
    EXPECT_EQ(x.sys.A.at(0), y.sys.A.at(0));
    EXPECT_EQ(x.sys.B.at(0), y.sys.B.at(0));
    EXPECT_EQ(x.sys.C.at(0), y.sys.C.at(0));
    EXPECT_EQ(x.sys.Q.at(0), y.sys.Q.at(0));
    EXPECT_EQ(x.sys.R.at(0), y.sys.R.at(0));
    EXPECT_EQ(x.P0, y.P0);
    EXPECT_EQ(x.barrier.kind(), y.barrier.kind());
    EXPECT_EQ(x.params.alpha, y.params.alpha);
    EXPECT_EQ(x.params.sigma, y.params.sigma);
    EXPECT_EQ(x.params.mode, y.params.mode);
    EXPECT_EQ(x.params.cj.index(), y.params.cj.index());
    EXPECT_EQ(x.x0, y.x0);
    EXPECT_EQ(x.horizon, y.horizon);
    EXPECT_EQ(x.gamma_override, y.gamma_override);
    EXPECT_EQ(x.gamma_mode, y.gamma_mode);
    EXPECT_EQ(a.trials, b.trials);
    EXPECT_EQ(a.master_seed, b.master_seed);
    EXPECT_EQ(a.sweep.alphas, b.sweep.alphas);
    EXPECT_EQ(a.sweep.k_Js, b.sweep.k_Js);
    EXPECT_EQ(a.grid.axes, b.grid.axes);
    EXPECT_EQ(a.meta, b.meta);
}

}  // namespace

TEST(Parse, Values) {
    EXPECT_DOUBLE_EQ(parse_value("1e-3").number, 1e-3);
    EXPECT_DOUBLE_EQ(parse_value("-2").number, -2.0);
    EXPECT_TRUE(parse_value("true").boolean);
    EXPECT_EQ(parse_value("\"a b\"").text, "a b");
    const auto m = parse_value("[[1, 2], [3, 4],]");
    ASSERT_EQ(m.kind, Value::Kind::List);
    ASSERT_EQ(m.items.size(), 2u);
    EXPECT_DOUBLE_EQ(m.items[1].items[0].number, 3.0);
    EXPECT_THROW(parse_value("[1, 2"), ConfigError);
    EXPECT_THROW(parse_value("1.5x"), ConfigError);
}

TEST(Parse, CommentsAndMultilineArrays) {
    const std::string text = replace_line(kMinimal, "A = [[1, 0.1], [0, 1]]",
                                          "# transition\nA = [[1, 0.1],  # row one\n     [0, 1]]");
    const auto cfg = build(parse_document(text));
    EXPECT_DOUBLE_EQ(cfg.scenario.sys.A.at(0)(0, 1), 0.1);
    EXPECT_EQ(cfg.scenario.horizon, 10u);
    EXPECT_EQ(cfg.trials, 100u);
    EXPECT_EQ(cfg.master_seed, 42u);
    EXPECT_EQ(cfg.scenario.P0, cfg.scenario.sys.Q.at(0));  // P0 defaults to Q
}

TEST(Parse, NonSquareAReportsLine) {
    const auto msg = error_of(replace_line(kMinimal, "A = [[1, 0.1], [0, 1]]", "A = [[1, 2], [3, 4], [5, 6]]"));
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("square"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3x2"), std::string::npos) << msg;
}

TEST(Parse, Diagnostics) {
    auto has = [](const std::string& msg, const std::string& part) {
        return msg.find(part) != std::string::npos;
    };
    std::string m = error_of(replace_line(kMinimal, "T = 10", "T = 10\nhorizon = 5"));
    EXPECT_TRUE(has(m, "unknown key 'run.horizon'")) << m;
    m = error_of(replace_line(kMinimal, "W = [[1, 0], [0, 1]]", "W = [[1, 0], [0]]"));
    EXPECT_TRUE(has(m, "ragged")) << m;
    m = error_of(replace_line(kMinimal, "alpha = 0.5", "alpha = 0.5\nalpha = 0.6"));
    EXPECT_TRUE(has(m, "duplicate key 'alpha'")) << m;
    m = error_of(std::string(kMinimal) + "\n[run]\n");
    EXPECT_TRUE(has(m, "duplicate section [run]")) << m;
    m = error_of(replace_line(kMinimal, "x0 = [0, 0]\n", ""));
    EXPECT_TRUE(has(m, "run.x0")) << m;
    m = error_of(replace_line(kMinimal, "k_J = 0.2", "k_J = 0.2\ncj_abs = 0.1"));
    EXPECT_TRUE(has(m, "only one of")) << m;
    m = error_of(replace_line(kMinimal, "alpha = 0.5", "alpha = 1.5"));
    EXPECT_TRUE(has(m, "alpha")) << m;
    m = error_of(replace_line(kMinimal, "kind = \"quadratic\"", "kind = \"torus\""));
    EXPECT_TRUE(has(m, "barrier.kind")) << m;
    m = error_of(replace_line(kMinimal, "C = [[1, 0]]", "C = [[1, 0, 0]]"));
    EXPECT_TRUE(has(m, "system.C")) << m;
    m = error_of(replace_line(kMinimal, "k_J = 0.2", "k_J = 0.2\ngamma = 0.1"));
    EXPECT_TRUE(has(m, "gamma_mode = fixed")) << m;
}

TEST(Override, DottedAssignments) {
    auto doc = parse_document(kMinimal);
    apply_override(doc, "safety.cj_abs=0.01");
    apply_override(doc, "safety.gamma=0.3");
    apply_override(doc, "run.x0=[0.1, -0.2]");
    const auto cfg = build(doc);
    EXPECT_DOUBLE_EQ(std::get<CjAbsolute>(cfg.scenario.params.cj).value, 0.01);
    EXPECT_EQ(cfg.scenario.gamma_override, std::optional<double>(0.3));
    EXPECT_DOUBLE_EQ(cfg.scenario.x0(1), -0.2);
    apply_override(doc, "safety.k_J=0.4");
    EXPECT_DOUBLE_EQ(std::get<CjFraction>(build(doc).scenario.params.cj).k_J, 0.4);
    EXPECT_THROW(apply_override(doc, "alpha=0.3"), ConfigError);
    EXPECT_THROW(apply_override(doc, "safety.alpha"), ConfigError);
}

TEST(Presets, Halfplane) {
    const auto cfg = load_preset("halfplane");
    const auto& s = cfg.scenario;
    EXPECT_DOUBLE_EQ(s.sys.A.at(0)(0, 1), 0.05);
    EXPECT_DOUBLE_EQ(s.sys.B.at(0)(0, 0), 0.0125);
    EXPECT_DOUBLE_EQ(s.sys.B.at(0)(1, 0), 0.05);
    EXPECT_EQ(s.sys.C.at(0), (Matrix(1, 2) << 0, 1).finished());
    EXPECT_DOUBLE_EQ(s.sys.R.at(0)(0, 0), 0.09);
    EXPECT_EQ(s.P0, s.sys.Q.at(0));
    EXPECT_DOUBLE_EQ(s.sys.Q.at(0)(1, 1), 0.123);
    const auto gain = s.nominal.resolve(s.sys);
    const Vector u = nominal_input(gain, (Vector(2) << 1.0, 1.0).finished());
    EXPECT_DOUBLE_EQ(u(0), -20.0);  // u = (-15, -5) x
    EXPECT_DOUBLE_EQ(s.params.alpha, 0.7);
    EXPECT_DOUBLE_EQ(std::get<CjFraction>(s.params.cj).k_J, 0.115);
    EXPECT_EQ(s.fallback_M, std::optional<double>(10.0));
    EXPECT_EQ(s.x0, (Vector(2) << 7, 0).finished());
    EXPECT_EQ(cfg.sweep.k_Js.front(), 0.05);
    EXPECT_EQ(cfg.sweep.k_Js.back(), 0.3);
}

TEST(Presets, Ellipsoid) {
    const auto s = load_preset("ellipsoid").scenario;
    const auto* q = s.barrier.as<ConcaveQuadratic>();
    ASSERT_NE(q, nullptr);
    EXPECT_DOUBLE_EQ(q->c0, 0.8);
    EXPECT_DOUBLE_EQ(q->W(0, 0), 1.0 / 144.0);
    EXPECT_DOUBLE_EQ(q->W(1, 1), 1.0 / 16.0);
    EXPECT_TRUE(s.nominal.is_lqr());
    EXPECT_DOUBLE_EQ(s.nominal.resolve(s.sys).target(0), -5.0);
    EXPECT_DOUBLE_EQ(s.params.alpha, 0.52);
    EXPECT_DOUBLE_EQ(std::get<CjFraction>(s.params.cj).k_J, 0.38);
    EXPECT_EQ(s.P0, s.sys.Q.at(0));
}

TEST(Presets, Pendulum) {
    const auto out = load_preset("pendulum_output");
    const auto st = load_preset("pendulum_state");
    EXPECT_EQ(out.meta.at("dt"), "0.01");
    EXPECT_DOUBLE_EQ(out.scenario.sys.A.at(0)(1, 0), 0.01);
    EXPECT_EQ(out.scenario.params.mode, FeedbackMode::OutputFeedback);
    EXPECT_EQ(st.scenario.params.mode, FeedbackMode::StateFeedback);
    EXPECT_EQ(out.grid.points().size(), 225u);
    EXPECT_NEAR(out.grid.axes[0][1], std::numbers::pi / 6.0, 1e-15);
    const double lam = hessian_bound(st.scenario.barrier);
    const double cJ = 0.5 * lam * st.scenario.sys.Q.at(0).trace();
    EXPECT_NEAR(std::get<CjAbsolute>(st.scenario.params.cj).value, cJ, 1e-15);
    EXPECT_NEAR(st.scenario.params.alpha, 1.0 - cJ, 1e-15);
}

TEST(Presets, UnknownName) { EXPECT_THROW(load_preset("nope"), ConfigError); }

TEST(RoundTrip, TextIsStable) {
    for (const auto& name : preset_names()) {
        const auto cfg = load_preset(name);
        const auto text = to_text(cfg);
        const auto again = build(parse_document(text));
        EXPECT_EQ(to_text(again), text) << name;
        expect_same_scenario(cfg, again);
    }
}

TEST(RoundTrip, ShippedScenariosMatchPresets) {
    for (const auto& name : preset_names()) {
        const std::string path = std::string(OFCBF_SOURCE_DIR) + "/scenarios/" + name + ".toml";
        const auto shipped = parse_config(path);
        EXPECT_EQ(to_text(shipped), to_text(load_preset(name))) << path;
    }
}

TEST(Grid, FirstAxisVariesFastest) {
    GridSpec g;
    g.axes = {{0, 1, 2}, {10, 30, 3}};
    const auto pts = g.points();
    ASSERT_EQ(pts.size(), 6u);
    EXPECT_EQ(pts[1], (Vector(2) << 1, 10).finished());
    EXPECT_EQ(pts[2], (Vector(2) << 0, 20).finished());
    EXPECT_EQ(pts[5], (Vector(2) << 1, 30).finished());
}
