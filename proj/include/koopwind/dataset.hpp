#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "koopwind/matrix.hpp"

namespace koopwind {

/// Time-indexed snapshots: column k of `x` and `u` belong to sample k.
struct Dataset {
    Matrix x;  // n_x x n_o
    Matrix u;  // n_u x n_o
    double dt = 1.0;
    std::vector<std::string> state_names;
    std::vector<std::string> input_names;

    std::size_t samples() const noexcept { return x.cols(); }
    std::size_t n_x() const noexcept { return x.rows(); }
    std::size_t n_u() const noexcept { return u.rows(); }

    /// Throws UsageError on inconsistent shapes or names, NumericalError on
    /// non-finite entries.
    void validate() const;

    std::size_t channel(const std::string& name) const;
    Vector state_row(const std::string& name) const;

    /// Columns [begin, end).
    Dataset slice(std::size_t begin, std::size_t end) const;
    /// Same samples restricted to the named states, in the given order.
    Dataset with_states(const std::vector<std::string>& names) const;
};

/// CSV with header `k,<states>,<inputs>`, 12 significant digits.
void write_dataset_csv(std::ostream& out, const Dataset& d);
void write_dataset_csv(const std::string& path, const Dataset& d);

/// The first column must be `k`; `n_inputs` trailing columns are inputs.
Dataset read_dataset_csv(std::istream& in, std::size_t n_inputs, double dt = 1.0);
Dataset read_dataset_csv(const std::string& path, std::size_t n_inputs, double dt = 1.0);

}  // namespace koopwind
