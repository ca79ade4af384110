#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "pssuq/circuit.hpp"
#include "pssuq/errors.hpp"

namespace pssuq {

namespace {

struct Token {
    std::string text;
    int column = 0;
};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Splits on whitespace, commas and parentheses; '=' is its own token.
std::vector<Token> tokenize(std::string_view line) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == '(' || c == ')') {
            ++i;
            continue;
        }
        if (c == '=') {
            tokens.push_back({"=", static_cast<int>(i) + 1});
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < line.size()) {
            const char d = line[i];
            if (std::isspace(static_cast<unsigned char>(d)) || d == ',' || d == '(' ||
                d == ')' || d == '=') {
                break;
            }
            ++i;
        }
        tokens.push_back({std::string(line.substr(start, i - start)), static_cast<int>(start) + 1});
    }
    return tokens;
}

double parse_literal(const Token& token, int line) {
    const std::string& s = token.text;
    if (s.empty() || !(std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '.' ||
                       s[0] == '-' || s[0] == '+')) {
        throw ParseError("expected a number, got '" + s + "'", line, token.column);
    }
    char* end = nullptr;
    const double mantissa = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) {
        throw ParseError("expected a number, got '" + s + "'", line, token.column);
    }
    std::string suffix = lower(end);
    double multiplier = 1.0;
    std::size_t used = 0;
    if (suffix.rfind("meg", 0) == 0) {
        multiplier = 1e6;
        used = 3;
    } else if (!suffix.empty()) {
        used = 1;
        switch (suffix[0]) {
            case 'f': multiplier = 1e-15; break;
            case 'p': multiplier = 1e-12; break;
            case 'n': multiplier = 1e-9; break;
            case 'u': multiplier = 1e-6; break;
            case 'm': multiplier = 1e-3; break;
            case 'k': multiplier = 1e3; break;
            case 'g': multiplier = 1e9; break;
            case 't': multiplier = 1e12; break;
            default: used = 0; break;
        }
    }
    // Anything after the scale suffix must be a unit name (ohm, h, v, ...).
    for (std::size_t k = used; k < suffix.size(); ++k) {
        if (!std::isalpha(static_cast<unsigned char>(suffix[k]))) {
            throw ParseError("malformed number '" + s + "'", line, token.column);
        }
    }
    const double value = mantissa * multiplier;
    if (!std::isfinite(value)) {
        throw ParseError("number out of range '" + s + "'", line, token.column);
    }
    return value;
}

struct PendingRef {
    std::string name;
    int line;
    int column;
    std::size_t element;
    int slot_id;
};

struct ParamDecl {
    DistributionSpec spec;
    int line;
};

class NetlistParser {
public:
    Circuit parse(std::string_view text) {
        std::istringstream stream{std::string(text)};
        std::string raw;
        int line_no = 0;
        while (std::getline(stream, raw)) {
            ++line_no;
            if (const auto semi = raw.find(';'); semi != std::string::npos) {
                raw.erase(semi);
            }
            const auto tokens = tokenize(raw);
            if (tokens.empty() || tokens.front().text[0] == '*') {
                continue;
            }
            if (tokens.front().text[0] == '.') {
                directive(tokens, line_no);
            } else {
                element(tokens, line_no);
            }
        }
        return finish();
    }

private:
    int node(const Token& token) {
        const std::string name = lower(token.text);
        if (name == "0") {
            return kGround;
        }
        const auto it = node_lookup_.find(name);
        if (it != node_lookup_.end()) {
            return it->second;
        }
        const int index = static_cast<int>(nodes_.size());
        nodes_.push_back(name);
        node_lookup_.emplace(name, index);
        return index;
    }

    ParamValue value(const Token& token, int line, std::size_t element, int slot_id) {
        const std::string& s = token.text;
        if (!s.empty() && s.front() == '{') {
            if (s.size() < 3 || s.back() != '}') {
                throw ParseError("malformed parameter reference '" + s + "'", line, token.column);
            }
            refs_.push_back({lower(s.substr(1, s.size() - 2)), line, token.column, element, slot_id});
            return ParamValue{0.0, -1};
        }
        return ParamValue{parse_literal(token, line), -1};
    }

    static void expect_count(const std::vector<Token>& tokens, std::size_t count, int line,
                             const char* usage) {
        if (tokens.size() < count) {
            const int column = tokens.back().column + static_cast<int>(tokens.back().text.size());
            throw ParseError(std::string("incomplete element, expected: ") + usage, line, column);
        }
    }

    // Parses trailing KEY=value pairs; bare flags are returned.
    std::vector<Token> keyed(const std::vector<Token>& tokens, std::size_t from, int line,
                             std::size_t element,
                             const std::map<std::string, int>& keys, std::set<std::string>& seen) {
        std::vector<Token> flags;
        std::size_t i = from;
        while (i < tokens.size()) {
            const std::string key = lower(tokens[i].text);
            if (i + 1 < tokens.size() && tokens[i + 1].text == "=") {
                const auto it = keys.find(key);
                if (it == keys.end()) {
                    throw ParseError("unknown parameter '" + tokens[i].text + "'", line,
                                     tokens[i].column);
                }
                if (i + 2 >= tokens.size()) {
                    throw ParseError("missing value for '" + tokens[i].text + "'", line,
                                     tokens[i + 1].column);
                }
                if (!seen.insert(key).second) {
                    throw ParseError("parameter '" + tokens[i].text + "' given twice", line,
                                     tokens[i].column);
                }
                elements_[element].params[static_cast<std::size_t>(it->second)] =
                    value(tokens[i + 2], line, element, it->second);
                i += 3;
            } else {
                flags.push_back(tokens[i]);
                ++i;
            }
        }
        return flags;
    }

    static void require(const std::set<std::string>& seen, const std::string& key,
                        const Token& name, int line) {
        if (seen.count(key) == 0) {
            throw ParseError("element " + name.text + " requires " + key + "=", line, name.column);
        }
    }

    void element(const std::vector<Token>& tokens, int line) {
        const Token& head = tokens.front();
        const std::string key = lower(head.text);
        if (!names_.insert(key).second) {
            throw ParseError("duplicate element name '" + head.text + "'", line, head.column);
        }
        Element e;
        e.name = head.text;
        const std::size_t index = elements_.size();
        const char letter = key[0];
        switch (letter) {
            case 'r':
            case 'c':
            case 'l': {
                expect_count(tokens, 4, line, "<name> n+ n- <value>");
                e.kind = letter == 'r'   ? ElementKind::resistor
                         : letter == 'c' ? ElementKind::capacitor
                                         : ElementKind::inductor;
                e.terminals = {node(tokens[1]), node(tokens[2])};
                elements_.push_back(std::move(e));
                auto v = value(tokens[3], line, index, slot::value);
                if (tokens[3].text.front() != '{' && v.literal <= 0.0) {
                    throw ParseError("non-positive value for " + head.text, line, tokens[3].column);
                }
                elements_[index].params[slot::value] = v;
                if (tokens.size() > 4) {
                    throw ParseError("unexpected token '" + tokens[4].text + "'", line,
                                     tokens[4].column);
                }
                break;
            }
            case 'v':
            case 'i': {
                expect_count(tokens, 4, line, "<name> n+ n- DC <v> | SIN(<off> <amp> <freq> [<phase>])");
                e.kind = letter == 'v' ? ElementKind::voltage_source : ElementKind::current_source;
                e.terminals = {node(tokens[1]), node(tokens[2])};
                elements_.push_back(std::move(e));
                const std::string form = lower(tokens[3].text);
                if (form == "sin") {
                    if (tokens.size() < 7 || tokens.size() > 8) {
                        throw ParseError("SIN expects <offset> <amplitude> <freq_hz> [<phase_deg>]",
                                         line, tokens[3].column);
                    }
                    elements_[index].sinusoidal = true;
                    elements_[index].params[slot::offset] = value(tokens[4], line, index, slot::offset);
                    elements_[index].params[slot::amplitude] =
                        value(tokens[5], line, index, slot::amplitude);
                    elements_[index].params[slot::frequency] =
                        value(tokens[6], line, index, slot::frequency);
                    if (tokens.size() == 8) {
                        elements_[index].params[slot::phase] = value(tokens[7], line, index, slot::phase);
                    }
                    const auto& f = elements_[index].params[slot::frequency];
                    if (tokens[6].text.front() != '{' && f.literal <= 0.0) {
                        throw ParseError("SIN frequency must be positive", line, tokens[6].column);
                    }
                } else {
                    std::size_t at = 3;
                    if (form == "dc") {
                        expect_count(tokens, 5, line, "DC <value>");
                        at = 4;
                    }
                    elements_[index].params[slot::offset] = value(tokens[at], line, index, slot::offset);
                    if (tokens.size() > at + 1) {
                        throw ParseError("unexpected token '" + tokens[at + 1].text + "'", line,
                                         tokens[at + 1].column);
                    }
                }
                break;
            }
            case 'd': {
                expect_count(tokens, 3, line, "<name> n+ n- IS=<v> [N=<v>] [CJ=<v>] [TEMP=<v>]");
                e.kind = ElementKind::diode;
                e.terminals = {node(tokens[1]), node(tokens[2])};
                e.params[slot::emission].literal = 1.0;
                e.params[slot::temp].literal = kDefaultTemperature;
                elements_.push_back(std::move(e));
                std::set<std::string> seen;
                const auto flags = keyed(tokens, 3, line, index,
                                         {{"is", slot::is}, {"n", slot::emission},
                                          {"cj", slot::cj}, {"temp", slot::temp}},
                                         seen);
                if (!flags.empty()) {
                    throw ParseError("unexpected token '" + flags.front().text + "'", line,
                                     flags.front().column);
                }
                require(seen, "is", head, line);
                break;
            }
            case 'm': {
                expect_count(tokens, 4, line, "<name> nd ng ns KP=<v> VT0=<v> [...]");
                e.kind = ElementKind::mosfet;
                e.terminals = {node(tokens[1]), node(tokens[2]), node(tokens[3])};
                elements_.push_back(std::move(e));
                std::set<std::string> seen;
                const auto flags = keyed(tokens, 4, line, index,
                                         {{"kp", slot::kp}, {"vt0", slot::vt0},
                                          {"lambda", slot::lambda}, {"cgs", slot::cgs},
                                          {"cgd", slot::cgd}},
                                         seen);
                for (const auto& flag : flags) {
                    const std::string f = lower(flag.text);
                    if (f == "pmos") {
                        elements_[index].pmos = true;
                    } else if (f != "nmos") {
                        throw ParseError("unexpected token '" + flag.text + "'", line, flag.column);
                    }
                }
                require(seen, "kp", head, line);
                require(seen, "vt0", head, line);
                break;
            }
            case 'q': {
                expect_count(tokens, 4, line, "<name> nc nb ne ALPHA=<v> IS=<v> [TEMP=<v>]");
                e.kind = ElementKind::bjt;
                e.terminals = {node(tokens[1]), node(tokens[2]), node(tokens[3])};
                e.params[slot::bjt_temp].literal = kDefaultTemperature;
                elements_.push_back(std::move(e));
                std::set<std::string> seen;
                const auto flags = keyed(tokens, 4, line, index,
                                         {{"alpha", slot::alpha}, {"is", slot::bjt_is},
                                          {"temp", slot::bjt_temp}},
                                         seen);
                if (!flags.empty()) {
                    throw ParseError("unexpected token '" + flags.front().text + "'", line,
                                     flags.front().column);
                }
                require(seen, "alpha", head, line);
                require(seen, "is", head, line);
                break;
            }
            case 'g': {
                expect_count(tokens, 3, line, "<name> n+ n- GN=<v> [VSAT=<v>]");
                e.kind = ElementKind::cubic_conductance;
                e.terminals = {node(tokens[1]), node(tokens[2])};
                e.params[slot::vsat].literal = 1.0;
                elements_.push_back(std::move(e));
                std::set<std::string> seen;
                const auto flags =
                    keyed(tokens, 3, line, index, {{"gn", slot::gn}, {"vsat", slot::vsat}}, seen);
                if (!flags.empty()) {
                    throw ParseError("unexpected token '" + flags.front().text + "'", line,
                                     flags.front().column);
                }
                require(seen, "gn", head, line);
                break;
            }
            default:
                throw ParseError("unknown element type '" + head.text + "'", line, head.column);
        }
    }

    void directive(const std::vector<Token>& tokens, int line) {
        const std::string name = lower(tokens.front().text);
        if (name == ".end") {
            return;
        }
        if (name == ".output") {
            if (tokens.size() != 2) {
                throw ParseError(".output expects one node name", line, tokens.front().column);
            }
            output_ = {lower(tokens[1].text), line, tokens[1].column};
            return;
        }
        if (name != ".param") {
            throw ParseError("unknown directive '" + tokens.front().text + "'", line,
                             tokens.front().column);
        }
        if (tokens.size() < 5 || tokens[2].text != "=") {
            throw ParseError(".param expects <name> = <distribution>(...)", line,
                             tokens.front().column);
        }
        const std::string pname = lower(tokens[1].text);
        const std::string kind = lower(tokens[3].text);
        std::vector<double> args;
        for (std::size_t i = 4; i < tokens.size(); ++i) {
            args.push_back(parse_literal(tokens[i], line));
        }
        DistributionSpec spec;
        if (kind == "gauss" || kind == "gaussian" || kind == "normal") {
            if (args.size() != 2) {
                throw ParseError("gauss expects (mean, std)", line, tokens[3].column);
            }
            if (!(args[1] > 0.0)) {
                throw ParseError("gauss std must be positive", line, tokens[5].column);
            }
            spec = DistributionSpec::gaussian(args[0], args[1]);
        } else if (kind == "uniform") {
            if (args.size() != 2) {
                throw ParseError("uniform expects (lo, hi)", line, tokens[3].column);
            }
            if (!(args[0] < args[1])) {
                throw ParseError("uniform requires lo < hi", line, tokens[4].column);
            }
            spec = DistributionSpec::uniform(args[0], args[1]);
        } else if (kind == "const") {
            if (args.size() != 1) {
                throw ParseError("const expects (value)", line, tokens[3].column);
            }
            spec = DistributionSpec::constant(args[0]);
        } else {
            throw ParseError("unknown distribution '" + tokens[3].text + "'", line,
                             tokens[3].column);
        }
        if (params_.count(pname) != 0) {
            throw ParseError("parameter '" + tokens[1].text + "' declared twice", line,
                             tokens[1].column);
        }
        params_.emplace(pname, ParamDecl{spec, line});
        param_order_.push_back(pname);
    }

    Circuit finish() {
        std::vector<RandomParameter> random;
        std::unordered_map<std::string, int> random_index;
        for (const auto& name : param_order_) {
            const auto& decl = params_.at(name);
            if (decl.spec.is_random()) {
                random_index.emplace(name, static_cast<int>(random.size()));
                random.push_back({name, decl.spec});
            }
        }
        for (const auto& ref : refs_) {
            const auto it = params_.find(ref.name);
            if (it == params_.end()) {
                throw ParseError("undeclared parameter '" + ref.name + "'", ref.line, ref.column);
            }
            auto& target = elements_[ref.element].params[static_cast<std::size_t>(ref.slot_id)];
            if (it->second.spec.is_random()) {
                target = ParamValue{it->second.spec.center(), random_index.at(ref.name)};
            } else {
                target = ParamValue{it->second.spec.first, -1};
                const auto kind = elements_[ref.element].kind;
                const bool positive_required = kind == ElementKind::resistor ||
                                               kind == ElementKind::capacitor ||
                                               kind == ElementKind::inductor;
                if (positive_required && target.literal <= 0.0) {
                    throw ParseError("non-positive value for " + elements_[ref.element].name,
                                     ref.line, ref.column);
                }
            }
        }
        std::optional<std::string> output;
        if (output_) {
            if (node_lookup_.count(output_->name) == 0) {
                throw ParseError("undeclared output node '" + output_->name + "'", output_->line,
                                 output_->column);
            }
            output = output_->name;
        }
        return Circuit(std::move(nodes_), std::move(elements_), std::move(random), output);
    }

    struct OutputDecl {
        std::string name;
        int line;
        int column;
    };

    std::vector<std::string> nodes_;
    std::unordered_map<std::string, int> node_lookup_;
    std::vector<Element> elements_;
    std::set<std::string> names_;
    std::vector<PendingRef> refs_;
    std::unordered_map<std::string, ParamDecl> params_;
    std::vector<std::string> param_order_;
    std::optional<OutputDecl> output_;
};

}  // namespace

Circuit parse_netlist(std::string_view text) { return NetlistParser{}.parse(text); }

std::shared_ptr<const Circuit> load_netlist(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open netlist '" + path + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return std::make_shared<const Circuit>(parse_netlist(buffer.str()));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

}  // namespace pssuq
