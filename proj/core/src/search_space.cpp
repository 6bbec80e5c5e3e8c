#include "voxnas/search_space.hpp"

#include <algorithm>

#include "json.hpp"
#include "voxnas/errors.hpp"

namespace voxnas {

namespace {

using nlohmann::json;

Decision int_decision(std::string name, std::vector<int64_t> choices) {
    Decision d;
    d.name = std::move(name);
    d.numeric = true;
    d.ints = std::move(choices);
    return d;
}

Decision str_decision(std::string name, std::vector<std::string> choices) {
    Decision d;
    d.name = std::move(name);
    d.numeric = false;
    d.strs = std::move(choices);
    return d;
}

std::vector<int64_t> patch_candidates(int64_t extent, int64_t divisor, const char* axis) {
    if (divisor < 1) throw ArgumentError("patch candidates: divisor must be >= 1");
    std::vector<int64_t> out;
    const int64_t base = (extent / divisor) * divisor;
    for (int64_t k = 0; k < 5; ++k) {
        const int64_t c = base - divisor * k;
        if (c >= divisor) out.push_back(c);
    }
    if (out.empty())
        throw ConfigError(std::string("dataset too small: no ") + axis + " patch candidate for median " +
                          std::to_string(extent) + " at divisor " + std::to_string(divisor));
    return out;
}

size_t find_int(const Decision& d, int64_t v) {
    for (size_t i = 0; i < d.ints.size(); ++i)
        if (d.ints[i] == v) return i;
    throw ArgumentError("decision '" + d.name + "' has no choice " + std::to_string(v));
}

size_t find_str(const Decision& d, const std::string& v) {
    for (size_t i = 0; i < d.strs.size(); ++i)
        if (d.strs[i] == v) return i;
    throw ArgumentError("decision '" + d.name + "' has no choice " + v);
}

json decision_to_json(const Decision& d) {
    json choices = json::array();
    if (d.numeric)
        for (int64_t v : d.ints) choices.push_back(v);
    else
        for (const auto& v : d.strs) choices.push_back(v);
    return json{{"name", d.name}, {"choices", choices}};
}

Decision decision_from_json(const json& j) {
    Decision d;
    d.name = j.at("name").get<std::string>();
    const json& choices = j.at("choices");
    if (!choices.is_array() || choices.empty()) throw FormatError("decision '" + d.name + "': empty choice list");
    d.numeric = choices[0].is_number_integer();
    for (const auto& c : choices) {
        if (d.numeric != c.is_number_integer())
            throw FormatError("decision '" + d.name + "': mixed choice types");
        if (d.numeric)
            d.ints.push_back(c.get<int64_t>());
        else
            d.strs.push_back(c.get<std::string>());
    }
    return d;
}

}  // namespace

void validate_stats(const TaskStats& s) {
    auto pos = [](int64_t v, const char* what) {
        if (v < 1) throw ArgumentError(std::string("task stats: ") + what + " must be positive");
    };
    pos(s.median_d, "median_d");
    pos(s.median_h, "median_h");
    pos(s.median_w, "median_w");
    pos(s.min_d, "min_d");
    pos(s.min_h, "min_h");
    pos(s.min_w, "min_w");
    pos(s.in_channels, "in_channels");
    pos(s.out_channels, "out_channels");
    if (s.min_d > s.median_d || s.min_h > s.median_h || s.min_w > s.median_w)
        throw ArgumentError("task stats: min extent exceeds median extent");
}

std::vector<int64_t> patch_hw_candidates(const TaskStats& stats, int64_t divisor) {
    return patch_candidates(std::max(stats.median_h, stats.median_w), divisor, "h/w");
}

std::vector<int64_t> patch_d_candidates(const TaskStats& stats, int64_t divisor) {
    return patch_candidates(stats.median_d, divisor, "depth");
}

StrideRule restrict_strides(const TaskStats& stats) {
    validate_stats(stats);
    StrideRule rule;
    auto walk = [](int64_t extent, std::array<std::vector<int64_t>, 4>& sets) {
        int64_t divisor = 1;
        for (int stage = 0; stage < 4; ++stage) {
            const bool two_ok = extent >= 4;
            if (stage < 2)
                sets[static_cast<size_t>(stage)] = two_ok ? std::vector<int64_t>{2} : std::vector<int64_t>{1};
            else
                sets[static_cast<size_t>(stage)] = two_ok ? std::vector<int64_t>{2, 1} : std::vector<int64_t>{1};
            const int64_t max_stride = sets[static_cast<size_t>(stage)].front();
            extent /= max_stride;
            divisor *= max_stride;
        }
        return divisor;
    };
    rule.divisor_d = walk(stats.min_d, rule.depth);
    rule.divisor_hw = walk(std::min(stats.min_h, stats.min_w), rule.hw);
    return rule;
}

DecisionSchema build_schema(const TaskStats& stats) {
    validate_stats(stats);
    const StrideRule rule = restrict_strides(stats);

    DecisionSchema s;
    s.stride1_d = rule.depth[0].front();
    s.stride1_hw = rule.hw[0].front();
    s.stride2_d = rule.depth[1].front();
    s.stride2_hw = rule.hw[1].front();
    s.divisor_d = rule.divisor_d;
    s.divisor_hw = rule.divisor_hw;
    s.in_channels = stats.in_channels;
    s.out_channels = stats.out_channels;

    s.decisions.push_back(int_decision("patch_hw", patch_hw_candidates(stats, rule.divisor_hw)));
    s.decisions.push_back(int_decision("patch_d", patch_d_candidates(stats, rule.divisor_d)));
    s.decisions.push_back(int_decision("stride3_d", rule.depth[2]));
    s.decisions.push_back(int_decision("stride3_hw", rule.hw[2]));
    s.decisions.push_back(int_decision("stride4_d", rule.depth[3]));
    s.decisions.push_back(int_decision("stride4_hw", rule.hw[3]));
    s.decisions.push_back(str_decision("pool", {"max", "avg"}));
    s.decisions.push_back(int_decision("dilation2", {1, 2, 3}));
    s.decisions.push_back(int_decision("dilation3", {1, 2, 3}));
    s.decisions.push_back(int_decision("dilation4", {1, 2, 3}));
    s.decisions.push_back(str_decision("activation", {"relu", "leaky_relu", "elu"}));
    for (const char* edge : {"skip_1_2", "skip_1_3", "skip_1_4", "skip_2_3", "skip_2_4", "skip_3_4"})
        s.decisions.push_back(str_decision(edge, {"connect", "zero"}));
    return s;
}

void validate_choice(const DecisionSchema& schema, const ArchChoice& choice) {
    if (choice.indices.size() != schema.decisions.size())
        throw ArgumentError("choice has " + std::to_string(choice.indices.size()) + " indices, schema has " +
                            std::to_string(schema.decisions.size()) + " decisions");
    for (size_t i = 0; i < schema.decisions.size(); ++i) {
        const Decision& d = schema.decisions[i];
        const int64_t idx = choice.indices[i];
        if (idx < 0 || static_cast<size_t>(idx) >= d.size())
            throw ArgumentError("choice index " + std::to_string(idx) + " out of range for decision '" + d.name +
                                "' (" + std::to_string(d.size()) + " choices)");
    }
}

ArchChoice max_architecture(const DecisionSchema& schema) {
    ArchChoice c;
    c.indices.reserve(schema.decisions.size());
    for (const Decision& d : schema.decisions) {
        size_t idx = 0;
        if (d.name == "patch_hw" || d.name == "patch_d") {
            idx = static_cast<size_t>(
                std::max_element(d.ints.begin(), d.ints.end()) - d.ints.begin());
        } else if (d.name.rfind("stride", 0) == 0) {
            idx = std::count(d.ints.begin(), d.ints.end(), int64_t{2}) ? find_int(d, 2) : find_int(d, 1);
        } else if (d.name.rfind("dilation", 0) == 0) {
            idx = find_int(d, 1);
        } else if (d.name == "pool") {
            idx = find_str(d, "max");
        } else if (d.name == "activation") {
            idx = 0;
        } else {  // skip edges
            idx = find_str(d, "connect");
        }
        c.indices.push_back(static_cast<int64_t>(idx));
    }
    return c;
}

uint64_t schema_space_size(const DecisionSchema& schema) {
    uint64_t n = 1;
    for (const Decision& d : schema.decisions) n *= static_cast<uint64_t>(d.size());
    return n;
}

std::string schema_to_json(const DecisionSchema& schema) {
    json decisions = json::array();
    for (const Decision& d : schema.decisions) decisions.push_back(decision_to_json(d));
    const json j{{"decisions", decisions},
                 {"fixed_strides",
                  {{"stride1_d", schema.stride1_d},
                   {"stride1_hw", schema.stride1_hw},
                   {"stride2_d", schema.stride2_d},
                   {"stride2_hw", schema.stride2_hw}}},
                 {"divisors", {{"d", schema.divisor_d}, {"hw", schema.divisor_hw}}},
                 {"channels", {{"in", schema.in_channels}, {"out", schema.out_channels}}}};
    return j.dump(2);
}

DecisionSchema schema_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        DecisionSchema s;
        for (const auto& d : j.at("decisions")) s.decisions.push_back(decision_from_json(d));
        const json& f = j.at("fixed_strides");
        s.stride1_d = f.at("stride1_d").get<int64_t>();
        s.stride1_hw = f.at("stride1_hw").get<int64_t>();
        s.stride2_d = f.at("stride2_d").get<int64_t>();
        s.stride2_hw = f.at("stride2_hw").get<int64_t>();
        s.divisor_d = j.at("divisors").at("d").get<int64_t>();
        s.divisor_hw = j.at("divisors").at("hw").get<int64_t>();
        s.in_channels = j.at("channels").at("in").get<int64_t>();
        s.out_channels = j.at("channels").at("out").get<int64_t>();
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("schema json: ") + e.what());
    }
}

std::string choice_to_json(const ArchChoice& choice) {
    return json{{"indices", choice.indices}}.dump();
}

ArchChoice choice_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        ArchChoice c;
        for (const auto& v : j.at("indices")) c.indices.push_back(v.get<int64_t>());
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("choice json: ") + e.what());
    }
}

}  // namespace voxnas
