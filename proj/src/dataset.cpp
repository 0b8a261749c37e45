#include "mechxfer/dataset.hpp"

#include <stdexcept>

namespace mechxfer {

void DomainDataset::validate() const {
    if (rows.rows() < 1) throw std::invalid_argument("domain '" + id + "' has no rows");
    if (rows.cols() < 2) throw std::invalid_argument("domain '" + id + "' needs at least one feature and a label");
    if (!columns.empty() && columns.size() != std::size_t(rows.cols()))
        throw std::invalid_argument("domain '" + id + "' column names do not match its width");
    if (!rows.allFinite()) throw std::invalid_argument("domain '" + id + "' contains non-finite values");
}

Matrix pool_rows(std::span<const DomainDataset> domains) {
    if (domains.empty()) return Matrix();
    Eigen::Index total = 0;
    const Eigen::Index d = domains.front().rows.cols();
    for (const auto& dom : domains) {
        if (dom.rows.cols() != d) throw ShapeError("pool_rows: domains have different widths");
        total += dom.rows.rows();
    }
    Matrix out(total, d);
    Eigen::Index at = 0;
    for (const auto& dom : domains) {
        out.middleRows(at, dom.rows.rows()) = dom.rows;
        at += dom.rows.rows();
    }
    return out;
}

}  // namespace mechxfer
