#pragma once

#include <stdexcept>
#include <vector>

namespace dyadic::detail {

// Thomas solve of a tridiagonal system; no pivoting. Call sites pass either
// I - G/2 with G skew (leading minors >= 1) or the negated absorbing
// generator (an irreducibly dominant M-matrix), both elimination-safe.
inline void solve_tridiagonal(std::vector<double> sub, std::vector<double> diag,
                              std::vector<double> super, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        if (diag[i - 1] == 0.0) throw std::range_error("tridiagonal solve: zero pivot");
        const double m = sub[i - 1] / diag[i - 1];
        diag[i] -= m * super[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    if (diag[n - 1] == 0.0) throw std::range_error("tridiagonal solve: zero pivot");
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - super[i] * rhs[i + 1]) / diag[i];
}

}  // namespace dyadic::detail
