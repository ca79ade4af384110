#pragma once

#include <vector>

#include "pssuq/transient.hpp"

namespace pssuq {

// Chain rules through the discrete one-period map of a trajectory. Per step,
//     dw_k/dw_{k-1} = (E_k + h G1 A_k)^{-1} (E_{k-1} - h G2 A_{k-1})
// with E = dQ/dw, A = dF/dw and per-row scheme weights G1, G2. Factors are
// taken from the trajectory or re-evaluated when it did not store them.

// d w_N / d w_0 accumulated natively on the stacked system (dense N x N).
[[nodiscard]] Matrix monodromy(const DaeSystem& system, const Trajectory& trajectory);

// Per-block monodromy in node coordinates (n x n each).
[[nodiscard]] std::vector<Matrix> node_monodromies(const DaeSystem& system,
                                                   const Trajectory& trajectory);

// d w_N / d a_hat for a time-scaled stacked system, starting from zero (N x K).
// P_k = dF/da_hat is built from the blocks' scale derivatives and V.
[[nodiscard]] Matrix scale_sensitivity(const DaeSystem& system, const Trajectory& trajectory);

// Per-block d w~_N,i / d a~_i in node coordinates.
[[nodiscard]] std::vector<Vector> node_scale_sensitivities(const DaeSystem& system,
                                                           const Trajectory& trajectory);

}  // namespace pssuq
