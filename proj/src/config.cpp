#include "dac/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "dac/errors.hpp"

namespace dac {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

bool parse_bool(const std::string& text, bool& out) {
    if (text == "true" || text == "1") out = true;
    else if (text == "false" || text == "0") out = false;
    else return false;
    return true;
}

// Splits on commas that are not inside braces.
std::vector<std::string> split_top_level(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    int depth = 0;
    for (char ch : text) {
        if (ch == '{') ++depth;
        if (ch == '}') --depth;
        if (ch == ',' && depth == 0) {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

}  // namespace

ClusterLayout parse_layout(const std::string& text) {
    ClusterLayout layout;
    for (const auto& part : split_top_level(text)) {
        const auto colon = part.rfind(':');
        if (part.empty() || colon == std::string::npos)
            throw ConfigError("layout: entry '" + part + "' is not of the form shift:count");
        const std::string shift = trim(part.substr(0, colon));
        const std::string count = trim(part.substr(colon + 1));
        ClusterSpec spec;
        if (!parse_number(count, spec.client_count))
            throw ConfigError("layout: entry '" + part + "' has a non-integer client count");
        if (!shift.empty() && shift.front() == '{') {
            if (shift.back() != '}') throw ConfigError("layout: unterminated label set in '" + part + "'");
            LabelSubset subset;
            const std::string inner = trim(shift.substr(1, shift.size() - 2));
            if (!inner.empty()) {
                std::stringstream ss(inner);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    int k;
                    if (!parse_number(trim(item), k))
                        throw ConfigError("layout: bad class index '" + trim(item) + "' in '" + part + "'");
                    subset.classes.push_back(k);
                }
            }
            spec.shift = subset;
        } else {
            double deg;
            if (!parse_number(shift, deg)) throw ConfigError("layout: bad rotation '" + shift + "' in '" + part + "'");
            spec.shift = Rotation{deg};
        }
        layout.entries.push_back(std::move(spec));
    }
    return layout;
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig c;
    std::vector<std::string> problems;
    std::set<std::string> seen;
    bool shift_given = false;

    auto number = [&problems](auto& field) {
        return [&field, &problems](const std::string& key, const std::string& v) {
            if (!parse_number(v, field)) problems.push_back(key + ": expected a number, got '" + v + "'");
        };
    };

    using Handler = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Handler> handlers = {
        {"protocol",
         [&](const std::string& key, const std::string& v) {
             if (auto p = protocol_from_string(v)) c.protocol = *p;
             else problems.push_back(key + ": unknown protocol '" + v + "' (dac, dac_var, random, pens, oracle, local)");
         }},
        {"K", number(c.K)},
        {"layout",
         [&](const std::string&, const std::string& v) {
             try {
                 c.layout = parse_layout(v);
             } catch (const ConfigError& e) {
                 problems.push_back(e.what());
             }
         }},
        {"shift",
         [&](const std::string& key, const std::string& v) {
             shift_given = true;
             if (v == "rotation") c.shift = ShiftKind::rotation;
             else if (v == "label") c.shift = ShiftKind::label;
             else problems.push_back(key + ": expected rotation or label, got '" + v + "'");
         }},
        {"T", number(c.T)},
        {"E", number(c.E)},
        {"m", number(c.m)},
        {"batch_size", number(c.batch_size)},
        {"learning_rate", number(c.learning_rate)},
        {"tau", number(c.tau)},
        {"tau_max", number(c.tau_max)},
        {"train_n", number(c.train_n)},
        {"val_n", number(c.val_n)},
        {"test_n", number(c.test_n)},
        {"n_classes", number(c.n_classes)},
        {"dim", number(c.dim)},
        {"hidden_dim", number(c.hidden_dim)},
        {"seed", number(c.seed)},
        {"output_dir", [&](const std::string&, const std::string& v) { c.output_dir = v; }},
        {"pens_selection_rounds", number(c.pens_selection_rounds)},
        {"pens_top_fraction", number(c.pens_top_fraction)},
        {"two_hop",
         [&](const std::string& key, const std::string& v) {
             if (!parse_bool(v, c.two_hop)) problems.push_back(key + ": expected true or false, got '" + v + "'");
         }},
        {"two_hop_rule",
         [&](const std::string& key, const std::string& v) {
             if (v == "most_similar") c.two_hop_rule = TwoHopRule::most_similar;
             else if (v == "least_similar") c.two_hop_rule = TwoHopRule::least_similar;
             else problems.push_back(key + ": expected most_similar or least_similar, got '" + v + "'");
         }},
        {"idx_images", [&](const std::string&, const std::string& v) { c.idx_images = v; }},
        {"idx_labels", [&](const std::string&, const std::string& v) { c.idx_labels = v; }},
    };

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back("line " + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = handlers.find(key);
        if (it == handlers.end()) {
            std::string best;
            std::size_t best_d = 3;
            for (const auto& [known, _] : handlers) {
                const auto d = edit_distance(key, known);
                if (d < best_d) {
                    best_d = d;
                    best = known;
                }
            }
            problems.push_back("line " + std::to_string(line_no) + ": unknown key '" + key + "'" +
                               (best.empty() ? "" : " (did you mean '" + best + "'?)"));
            continue;
        }
        if (!seen.insert(key).second) problems.push_back(key + ": given more than once");
        it->second(key, value);
    }

    bool complete = true;
    for (const char* required : {"protocol", "K", "layout", "seed"})
        if (!seen.count(required)) {
            problems.push_back(std::string("missing required key '") + required + "'");
            complete = false;
        }

    if (!shift_given && !c.layout.entries.empty())
        c.shift = std::holds_alternative<LabelSubset>(c.layout.entries.front().shift) ? ShiftKind::label
                                                                                       : ShiftKind::rotation;

    // Without the required keys the semantic checks would only repeat them.
    if (complete)
        for (auto& p : c.problems()) problems.push_back(std::move(p));

    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string echo_config(const ExperimentConfig& c) {
    std::ostringstream out;
    std::string layout;
    for (const auto& e : c.layout.entries)
        layout += (layout.empty() ? "" : ", ") + to_string(e.shift) + ":" + std::to_string(e.client_count);
    out << "protocol = " << to_string(c.protocol) << '\n'
        << "K = " << c.K << '\n'
        << "layout = " << layout << '\n'
        << "shift = " << (c.shift == ShiftKind::rotation ? "rotation" : "label") << '\n'
        << "seed = " << c.seed << '\n'
        << "T = " << c.T << '\n'
        << "E = " << c.E << '\n'
        << "m = " << c.m << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "learning_rate = " << format_double(c.learning_rate) << '\n'
        << "tau = " << format_double(c.tau) << '\n'
        << "tau_max = " << format_double(c.tau_max) << '\n'
        << "train_n = " << c.train_n << '\n'
        << "val_n = " << c.val_n << '\n'
        << "test_n = " << c.test_n << '\n'
        << "n_classes = " << c.n_classes << '\n'
        << "dim = " << c.dim << '\n'
        << "hidden_dim = " << c.hidden_dim << '\n'
        << "pens_selection_rounds = " << c.pens_selection_rounds << '\n'
        << "pens_top_fraction = " << format_double(c.pens_top_fraction) << '\n'
        << "two_hop = " << (c.two_hop ? "true" : "false") << '\n'
        << "two_hop_rule = " << (c.two_hop_rule == TwoHopRule::most_similar ? "most_similar" : "least_similar") << '\n'
        << "output_dir = " << c.output_dir.string() << '\n';
    if (!c.idx_images.empty()) out << "idx_images = " << c.idx_images.string() << '\n';
    if (!c.idx_labels.empty()) out << "idx_labels = " << c.idx_labels.string() << '\n';
    return out.str();
}

}  // namespace dac
