#pragma once

#include <iomanip>
#include <optional>
#include <sstream>
#include <vector>

#include "everadapt/data.hpp"
#include "everadapt/model.hpp"

namespace everadapt {

// Lower-triangular accuracy bookkeeping: entry (i,j) is the test accuracy
// on target domain j after adapting through target domain i, in percentage
// points. Each defined cell is written exactly once.
class ResultMatrix {
public:
    ResultMatrix() = default;
    explicit ResultMatrix(std::size_t n_domains)
        : n_(n_domains), values_(n_domains * n_domains, 0.0),
          defined_(n_domains * n_domains, false) {}

    std::size_t size() const { return n_; }

    void set(std::size_t i, std::size_t j, double accuracy_pct) {
        check_range(i, j);
        if (j > i) throw value_error("result matrix: cell (i,j) requires j <= i");
        if (defined_[i * n_ + j])
            throw state_error("result matrix: cell written twice");
        if (accuracy_pct < 0.0 || accuracy_pct > 100.0)
            throw value_error("result matrix: accuracy outside [0,100]");
        values_[i * n_ + j] = accuracy_pct;
        defined_[i * n_ + j] = true;
    }

    double get(std::size_t i, std::size_t j) const {
        check_range(i, j);
        if (!defined_[i * n_ + j]) throw state_error("result matrix: cell undefined");
        return values_[i * n_ + j];
    }

    bool defined(std::size_t i, std::size_t j) const {
        check_range(i, j);
        return defined_[i * n_ + j];
    }

    bool row_complete(std::size_t i) const {
        for (std::size_t j = 0; j <= i; ++j)
            if (!defined(i, j)) return false;
        return true;
    }

private:
    void check_range(std::size_t i, std::size_t j) const {
        if (i >= n_ || j >= n_) throw value_error("result matrix: index out of range");
    }

    std::size_t n_ = 0;
    std::vector<double> values_;
    std::vector<bool> defined_;
};

// Percentage of correct argmax predictions, model in eval mode.
inline double accuracy(Model& model, const DomainDataset& dataset) {
    if (dataset.size() == 0) throw data_error("accuracy: empty dataset");
    if (!dataset.labeled()) throw data_error("accuracy: dataset has no labels");

    const bool was_training = model.training;
    model.set_training(false);
    std::size_t correct = 0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        const std::size_t end = std::min(dataset.size(), start + chunk);
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Graph g;
        TensorPtr logits = model.forward(g, make_batch(dataset, idx));
        const std::size_t classes = logits->dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (logits->at2(b, c) > logits->at2(b, best)) best = c;
            if (static_cast<int>(best) == dataset.labels[idx[b]]) ++correct;
        }
    }
    model.set_training(was_training);
    return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ACC: mean of the final row.
inline double acc_metric(const ResultMatrix& r) {
    if (r.size() == 0) throw state_error("acc_metric: empty matrix");
    const std::size_t last = r.size() - 1;
    if (!r.row_complete(last)) throw state_error("acc_metric: final row incomplete");
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r.get(last, j);
    return s / static_cast<double>(r.size());
}

// BWT: mean over previous domains of (final accuracy - just-adapted
// accuracy). Absent for a single-domain run.
inline std::optional<double> bwt_metric(const ResultMatrix& r) {
    if (r.size() < 2) return std::nullopt;
    const std::size_t last = r.size() - 1;
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < r.size(); ++i)
        s += r.get(last, i) - r.get(i, i);
    return s / static_cast<double>(r.size() - 1);
}

enum class AdaptMode { Corrected, PaperLiteral };

// ADAPT: average of the diagonal (just-adapted) accuracies. The corrected
// reading divides the N-term sum by N; the literal reading divides by N-1
// and is kept behind the mode flag.
inline double adapt_metric(const ResultMatrix& r, AdaptMode mode = AdaptMode::Corrected) {
    if (r.size() == 0) throw state_error("adapt_metric: empty matrix");
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r.get(i, i);
    if (mode == AdaptMode::PaperLiteral) {
        if (r.size() == 1)
            throw value_error("adapt_metric: literal form divides by N-1 = 0");
        return s / static_cast<double>(r.size() - 1);
    }
    return s / static_cast<double>(r.size());
}

// Supplementary CSV: one row per adaptation stage, undefined cells blank.
inline std::string rmatrix_to_csv(const ResultMatrix& r,
                                  const std::vector<std::string>& domain_names = {}) {
    std::ostringstream os;
    os << "stage";
    for (std::size_t j = 0; j < r.size(); ++j)
        os << ',' << (j < domain_names.size() ? domain_names[j]
                                              : "domain" + std::to_string(j));
    os << '\n';
    os << std::setprecision(10);
    for (std::size_t i = 0; i < r.size(); ++i) {
        os << i;
        for (std::size_t j = 0; j < r.size(); ++j) {
            os << ',';
            if (r.defined(i, j)) os << r.get(i, j);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace everadapt
