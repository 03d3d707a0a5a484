#include "koopwind/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace koopwind {

void Dataset::validate() const {
    require(x.cols() == u.cols(), "dataset: state and input sample counts differ");
    require(state_names.size() == x.rows(), "dataset: state names do not match state rows");
    require(input_names.size() == u.rows(), "dataset: input names do not match input rows");
    require(dt > 0.0, "dataset: dt must be positive");
    if (!x.all_finite() || !u.all_finite()) throw NumericalError("dataset contains non-finite values");
}

std::size_t Dataset::channel(const std::string& name) const {
    const auto it = std::find(state_names.begin(), state_names.end(), name);
    require(it != state_names.end(), "dataset has no state channel '" + name + "'");
    return std::size_t(it - state_names.begin());
}

Vector Dataset::state_row(const std::string& name) const {
    const auto r = x.row_span(channel(name));
    return {r.begin(), r.end()};
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= samples(), "dataset slice out of range");
    Dataset d = *this;
    d.x = x.block(0, begin, x.rows(), end - begin);
    d.u = u.block(0, begin, u.rows(), end - begin);
    return d;
}

Dataset Dataset::with_states(const std::vector<std::string>& names) const {
    Dataset d = *this;
    d.x = Matrix(names.size(), samples());
    d.state_names = names;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::size_t c = channel(names[i]);
        std::copy(x.row_span(c).begin(), x.row_span(c).end(), d.x.row_span(i).begin());
    }
    return d;
}

void write_dataset_csv(std::ostream& out, const Dataset& d) {
    out << 'k';
    for (const auto& n : d.state_names) out << ',' << n;
    for (const auto& n : d.input_names) out << ',' << n;
    out << '\n';
    char buf[32];
    for (std::size_t k = 0; k < d.samples(); ++k) {
        out << k;
        for (std::size_t i = 0; i < d.n_x(); ++i) {
            std::snprintf(buf, sizeof buf, ",%.12g", d.x(i, k));
            out << buf;
        }
        for (std::size_t i = 0; i < d.n_u(); ++i) {
            std::snprintf(buf, sizeof buf, ",%.12g", d.u(i, k));
            out << buf;
        }
        out << '\n';
    }
}

void write_dataset_csv(const std::string& path, const Dataset& d) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open '" + path + "' for writing");
    write_dataset_csv(f, d);
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    return out;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in, std::size_t n_inputs, double dt) {
    std::string line;
    if (!std::getline(in, line)) throw UsageError("dataset CSV is empty");
    const auto header = split(line);
    require(header.size() >= n_inputs + 2 && header[0] == "k", "dataset CSV header must start with 'k'");
    const std::size_t n_x = header.size() - 1 - n_inputs;

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line);
        require(cells.size() == header.size(), "dataset CSV row " + std::to_string(rows.size() + 1) + " has wrong width");
        std::vector<double> v(cells.size() - 1);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            char* end = nullptr;
            v[c - 1] = std::strtod(cells[c].c_str(), &end);
            require(end != cells[c].c_str(), "dataset CSV: bad number '" + cells[c] + "'");
        }
        rows.push_back(std::move(v));
    }

    Dataset d;
    d.dt = dt;
    d.x = Matrix(n_x, rows.size());
    d.u = Matrix(n_inputs, rows.size());
    d.state_names.assign(header.begin() + 1, header.begin() + 1 + std::ptrdiff_t(n_x));
    d.input_names.assign(header.begin() + 1 + std::ptrdiff_t(n_x), header.end());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t i = 0; i < n_x; ++i) d.x(i, k) = rows[k][i];
        for (std::size_t i = 0; i < n_inputs; ++i) d.u(i, k) = rows[k][n_x + i];
    }
    d.validate();
    return d;
}

Dataset read_dataset_csv(const std::string& path, std::size_t n_inputs, double dt) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open dataset '" + path + "'");
    return read_dataset_csv(f, n_inputs, dt);
}

}  // namespace koopwind
