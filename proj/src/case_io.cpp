#include "qloss/case_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "qloss/errors.hpp"

namespace qloss {

namespace {

using nlohmann::json;

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Field access with the JSON path carried into every error.
class Reader {
  public:
    Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) fail("expected an object");
    }

    double number(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number()) fail_at(key, "expected a number");
        return v.get<double>();
    }

    double number(const char* key, double fallback) const {
        return node_.contains(key) ? number(key) : fallback;
    }

    int integer(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number_integer()) fail_at(key, "expected an integer");
        return v.get<int>();
    }

    std::string text(const char* key, const std::string& fallback) const {
        if (!node_.contains(key)) return fallback;
        const auto& v = node_.at(key);
        if (!v.is_string()) fail_at(key, "expected a string");
        return v.get<std::string>();
    }

    bool boolean(const char* key, bool fallback) const {
        if (!node_.contains(key)) return fallback;
        const auto& v = node_.at(key);
        if (!v.is_boolean()) fail_at(key, "expected true or false");
        return v.get<bool>();
    }

    std::array<double, 2> pair(const char* key, std::array<double, 2> fallback) const {
        if (!node_.contains(key)) return fallback;
        const auto& v = node_.at(key);
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
            fail_at(key, "expected [low, high]");
        }
        return {v[0].get<double>(), v[1].get<double>()};
    }

    const json& array(const char* key) const {
        static const json empty = json::array();
        if (!node_.contains(key)) return empty;
        const auto& v = node_.at(key);
        if (!v.is_array()) fail_at(key, "expected an array");
        return v;
    }

    std::string child(const char* key, std::size_t i) const {
        return (path_.empty() ? std::string{} : path_ + ".") + key + "[" + std::to_string(i) + "]";
    }

    [[noreturn]] void fail_at(const char* key, const std::string& what) const {
        throw ParseError(what, 0, (path_.empty() ? std::string{} : path_ + ".") + key);
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, 0, path_); }

  private:
    const json& at(const char* key) const {
        if (!node_.contains(key)) fail_at(key, "missing required field");
        return node_.at(key);
    }

    const json& node_;
    std::string path_;
};

BusKind parse_kind(const Reader& r) {
    auto kind = r.text("kind", "load");
    if (kind == "slack") return BusKind::slack;
    if (kind == "load" || kind == "load-bus") return BusKind::load;
    r.fail_at("kind", "unknown bus kind '" + kind + "'");
}

BranchStatus parse_status(const Reader& r) {
    auto s = r.text("status", "in-service");
    if (s == "in-service") return BranchStatus::in_service;
    if (s == "switched-off") return BranchStatus::switched_off;
    r.fail_at("status", "unknown branch status '" + s + "'");
}

bool parse_on_off(const Reader& r, const char* key) {
    auto s = r.text(key, "on");
    if (s == "on") return true;
    if (s == "off") return false;
    r.fail_at(key, "expected \"on\" or \"off\"");
}

}  // namespace

Network parse_case(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), line_of_offset(text, e.byte), "");
    }

    Reader top(doc, "");
    Network net;
    net.name = top.text("name", "");
    net.base_mva = top.number("base_mva");
    net.base_kv = top.number("base_kv", 1.0);
    net.slack_voltage = top.number("slack_voltage", 1.0);
    net.v_limits = top.pair("v_limits", {0.90, 1.10});
    net.allow_unequal_ratings = top.boolean("allow_unequal_ratings", false);

    const auto& buses = top.array("buses");
    for (std::size_t i = 0; i < buses.size(); ++i) {
        Reader r(buses[i], top.child("buses", i));
        Bus b;
        b.id = r.integer("id");
        b.kind = parse_kind(r);
        b.shunt_susceptance = r.number("shunt_susceptance", 0.0);
        b.shunt_on = parse_on_off(r, "shunt_status");
        net.buses.push_back(b);
    }

    const auto& branches = top.array("branches");
    for (std::size_t i = 0; i < branches.size(); ++i) {
        Reader r(branches[i], top.child("branches", i));
        Branch br;
        br.from_bus = r.integer("from");
        br.to_bus = r.integer("to");
        br.r = r.number("r");
        br.x = r.number("x");
        br.tap_ratio = r.number("tap_ratio", 1.0);
        br.status = parse_status(r);
        net.branches.push_back(br);
    }

    const auto& loads = top.array("loads");
    for (std::size_t i = 0; i < loads.size(); ++i) {
        Reader r(loads[i], top.child("loads", i));
        net.loads.push_back({r.integer("bus"), r.number("p"), r.number("q")});
    }

    const auto& inverters = top.array("inverters");
    for (std::size_t i = 0; i < inverters.size(); ++i) {
        Reader r(inverters[i], top.child("inverters", i));
        InverterSpec inv;
        inv.bus = r.integer("bus");
        inv.p_rated = r.number("p_rated");
        inv.s_rated = r.number("s_rated", inv.p_rated);
        inv.pf_limit = r.number("pf_limit", 0.8);
        inv.p_now = r.number("p_now", 0.0);
        net.inverters.push_back(inv);
    }

    const auto& taps = top.array("tap_changers");
    for (std::size_t i = 0; i < taps.size(); ++i) {
        Reader r(taps[i], top.child("tap_changers", i));
        TapChanger tc;
        int branch = r.integer("branch");
        if (branch < 0) r.fail_at("branch", "branch id must be non-negative");
        tc.branch = static_cast<BranchId>(branch);
        tc.controlled_bus = r.integer("controlled_bus");
        tc.tap_min = r.number("tap_min");
        tc.tap_max = r.number("tap_max");
        tc.tap_step = r.number("tap_step");
        tc.v_band = r.pair("v_band", {0.95, 1.05});
        net.tap_changers.push_back(tc);
    }

    return make_network(std::move(net));
}

std::string serialize_case(const Network& net) {
    json doc;
    doc["name"] = net.name;
    doc["base_mva"] = net.base_mva;
    doc["base_kv"] = net.base_kv;
    doc["slack_voltage"] = net.slack_voltage;
    doc["v_limits"] = {net.v_limits[0], net.v_limits[1]};
    if (net.allow_unequal_ratings) doc["allow_unequal_ratings"] = true;

    doc["buses"] = json::array();
    for (const auto& b : net.buses) {
        json j{{"id", b.id}, {"kind", to_string(b.kind)}};
        if (b.shunt_susceptance != 0.0 || !b.shunt_on) {
            j["shunt_susceptance"] = b.shunt_susceptance;
            j["shunt_status"] = b.shunt_on ? "on" : "off";
        }
        doc["buses"].push_back(std::move(j));
    }
    doc["branches"] = json::array();
    for (const auto& br : net.branches) {
        json j{{"from", br.from_bus}, {"to", br.to_bus}, {"r", br.r}, {"x", br.x}};
        if (br.tap_ratio != 1.0) j["tap_ratio"] = br.tap_ratio;
        if (!br.in_service()) j["status"] = to_string(br.status);
        doc["branches"].push_back(std::move(j));
    }
    doc["loads"] = json::array();
    for (const auto& l : net.loads) doc["loads"].push_back({{"bus", l.bus}, {"p", l.p_load}, {"q", l.q_load}});
    doc["inverters"] = json::array();
    for (const auto& inv : net.inverters) {
        doc["inverters"].push_back({{"bus", inv.bus},
                                    {"s_rated", inv.s_rated},
                                    {"p_rated", inv.p_rated},
                                    {"pf_limit", inv.pf_limit},
                                    {"p_now", inv.p_now}});
    }
    doc["tap_changers"] = json::array();
    for (const auto& tc : net.tap_changers) {
        doc["tap_changers"].push_back({{"branch", tc.branch},
                                       {"controlled_bus", tc.controlled_bus},
                                       {"tap_min", tc.tap_min},
                                       {"tap_max", tc.tap_max},
                                       {"tap_step", tc.tap_step},
                                       {"v_band", {tc.v_band[0], tc.v_band[1]}}});
    }
    return doc.dump(2) + "\n";
}

Network load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", 0, path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_case(buf.str());
}

void save_case(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << serialize_case(net);
}

}  // namespace qloss
