#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pssuq/types.hpp"

namespace pssuq {

enum class DistributionKind { gaussian, uniform, constant };

// Distribution of one declared parameter, in the parameter's physical unit.
// Random kinds map a standardized coordinate xi (standard normal, or uniform
// on [-1, 1]) affinely onto the physical value.
struct DistributionSpec {
    DistributionKind kind = DistributionKind::constant;
    double first = 0.0;   // mean | lo | value
    double second = 0.0;  // std  | hi | unused

    [[nodiscard]] static DistributionSpec gaussian(double mean, double std);
    [[nodiscard]] static DistributionSpec uniform(double lo, double hi);
    [[nodiscard]] static DistributionSpec constant(double value);

    [[nodiscard]] bool is_random() const noexcept { return kind != DistributionKind::constant; }
    [[nodiscard]] double center() const noexcept;
    // d(theta)/d(xi) of the affine map.
    [[nodiscard]] double scale() const noexcept;
    [[nodiscard]] double map(double xi) const noexcept { return center() + scale() * xi; }
    [[nodiscard]] bool in_support(double theta) const noexcept;
};

// A numeric element parameter: a literal, or a reference to random parameter `random`.
struct ParamValue {
    double literal = 0.0;
    int random = -1;

    [[nodiscard]] bool is_random() const noexcept { return random >= 0; }
};

enum class ElementKind {
    resistor,
    capacitor,
    inductor,
    voltage_source,
    current_source,
    diode,
    mosfet,
    bjt,
    cubic_conductance,
};

// Parameter slots per element kind.
namespace slot {
inline constexpr int value = 0;  // R, C, L

inline constexpr int offset = 0;  // V, I: DC value or SIN offset
inline constexpr int amplitude = 1;
inline constexpr int frequency = 2;
inline constexpr int phase = 3;

inline constexpr int is = 0;  // diode
inline constexpr int emission = 1;
inline constexpr int cj = 2;
inline constexpr int temp = 3;

inline constexpr int kp = 0;  // mosfet
inline constexpr int vt0 = 1;
inline constexpr int lambda = 2;
inline constexpr int cgs = 3;
inline constexpr int cgd = 4;

inline constexpr int alpha = 0;  // bjt
inline constexpr int bjt_is = 1;
inline constexpr int bjt_temp = 2;

inline constexpr int gn = 0;  // cubic conductance
inline constexpr int vsat = 1;

inline constexpr int count = 6;
}  // namespace slot

inline constexpr int kGround = -1;

struct Element {
    ElementKind kind = ElementKind::resistor;
    std::string name;
    // Node indices into Circuit::node_names(); kGround for node "0".
    std::vector<int> terminals;
    std::array<ParamValue, slot::count> params{};
    bool sinusoidal = false;  // sources
    bool pmos = false;        // mosfet
    // State index of the branch current (inductors, voltage sources), else -1.
    int branch = -1;
};

struct RandomParameter {
    std::string name;
    DistributionSpec distribution;
};

// Parsed netlist. Immutable after construction; state ordering is node voltages
// in first-use order, then inductor currents, then voltage-source currents.
class Circuit {
public:
    Circuit(std::vector<std::string> nodes, std::vector<Element> elements,
            std::vector<RandomParameter> random_params, std::optional<std::string> output_node);

    [[nodiscard]] Index dimension() const noexcept { return dimension_; }
    [[nodiscard]] Index parameter_count() const noexcept {
        return static_cast<Index>(random_params_.size());
    }
    [[nodiscard]] const std::vector<std::string>& node_names() const noexcept { return nodes_; }
    [[nodiscard]] const std::vector<Element>& elements() const noexcept { return elements_; }
    [[nodiscard]] const std::vector<RandomParameter>& random_parameters() const noexcept {
        return random_params_;
    }
    [[nodiscard]] std::vector<DistributionSpec> distributions() const;
    [[nodiscard]] const std::optional<std::string>& output_node() const noexcept {
        return output_node_;
    }

    [[nodiscard]] std::vector<std::string> state_names() const;
    // State index of a node voltage ("out") or a branch current ("i(L1)").
    [[nodiscard]] Index state_index(std::string_view name) const;
    [[nodiscard]] const Element* find_element(std::string_view name) const;

    // Rows that carry a charge or flux term for some state.
    [[nodiscard]] std::vector<bool> charge_rows() const;

    // True when no sinusoidal source exists.
    [[nodiscard]] bool is_autonomous() const;
    // Common period of the sinusoidal sources, when they have literal, commensurate frequencies.
    [[nodiscard]] std::optional<double> source_period() const;

private:
    std::vector<std::string> nodes_;
    std::vector<Element> elements_;
    std::vector<RandomParameter> random_params_;
    std::optional<std::string> output_node_;
    Index dimension_ = 0;
};

// Result of evaluating the MNA pieces dq(x)/dt + f(x) = B u(t).
struct DaeEval {
    Vector q;
    Vector f;
    Vector bu;
    Matrix dq_dx;
    Matrix df_dx;
};

struct ParamDerivatives {
    Matrix df_dtheta;
    Matrix dq_dtheta;
    Matrix dbu_dtheta;
};

// Thermal voltage kT/q at the given temperature in kelvin.
[[nodiscard]] double thermal_voltage(double kelvin) noexcept;

inline constexpr double kDefaultTemperature = 300.0;

// A circuit with every random parameter bound to a physical value.
class CircuitInstance {
public:
    CircuitInstance(std::shared_ptr<const Circuit> circuit, Vector theta);

    [[nodiscard]] const Circuit& circuit() const noexcept { return *circuit_; }
    [[nodiscard]] const std::shared_ptr<const Circuit>& circuit_ptr() const noexcept {
        return circuit_;
    }
    [[nodiscard]] const Vector& theta() const noexcept { return theta_; }
    [[nodiscard]] Index dimension() const noexcept { return circuit_->dimension(); }

    [[nodiscard]] double value(std::size_t element, int slot_id) const noexcept {
        return values_[element][static_cast<std::size_t>(slot_id)];
    }

    void evaluate(const Vector& x, double t, DaeEval& out, bool with_jacobian = true) const;
    [[nodiscard]] DaeEval evaluate(const Vector& x, double t) const;
    [[nodiscard]] ParamDerivatives parameter_derivatives(const Vector& x, double t) const;
    // d(Bu)/dt.
    [[nodiscard]] Vector source_rate(double t) const;
    [[nodiscard]] Vector sources(double t) const;

private:
    std::shared_ptr<const Circuit> circuit_;
    Vector theta_;
    std::vector<std::array<double, slot::count>> values_;
};

[[nodiscard]] CircuitInstance realize(const std::shared_ptr<const Circuit>& circuit,
                                      const Vector& xi);

// Newton solve of f(x) = B u(t) with capacitors open and inductors shorted.
[[nodiscard]] Vector dc_operating_point(const CircuitInstance& instance, double t = 0.0);

[[nodiscard]] Circuit parse_netlist(std::string_view text);
[[nodiscard]] std::shared_ptr<const Circuit> load_netlist(const std::string& path);

}  // namespace pssuq
