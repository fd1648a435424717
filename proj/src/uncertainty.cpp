#include "endd/uncertainty.hpp"

#include <stdexcept>

namespace endd::uncertainty {

TokenUncertainty token_uncertainty_ensemble(const dirmath::TokenPosteriorSet& s,
                                            int position) {
    return {position, dirmath::ensemble_uncertainties(s)};
}

TokenUncertainty token_uncertainty_dirichlet(const dirmath::DirichletParams& d,
                                             int position) {
    return {position, dirmath::mutual_information(d)};
}

SequenceUncertainty sequence_uncertainty(const std::vector<TokenUncertainty>& tokens) {
    if (tokens.empty())
        throw std::invalid_argument("sequence_uncertainty: empty token list");
    SequenceUncertainty s;
    // Left-to-right summation keeps the additivity invariant exact.
    for (const TokenUncertainty& t : tokens) {
        s.total_sum += t.triple.total;
        s.data_sum += t.triple.data;
        s.knowledge_sum += t.triple.knowledge;
    }
    s.length = static_cast<int>(tokens.size());
    s.total_rate = s.total_sum / s.length;
    s.data_rate = s.data_sum / s.length;
    s.knowledge_rate = s.knowledge_sum / s.length;
    return s;
}

SequenceUncertainty sequence_uncertainty_sampled(
    const std::vector<std::vector<TokenUncertainty>>& samples) {
    if (samples.empty())
        throw std::invalid_argument("sequence_uncertainty_sampled: no samples");
    SequenceUncertainty s;
    double mean_len = 0.0;
    for (const auto& sample : samples) {
        SequenceUncertainty one = sequence_uncertainty(sample);
        s.total_sum += one.total_sum;
        s.data_sum += one.data_sum;
        s.knowledge_sum += one.knowledge_sum;
        mean_len += one.length;
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    s.total_sum *= inv;
    s.data_sum *= inv;
    s.knowledge_sum *= inv;
    mean_len *= inv;
    s.length = static_cast<int>(mean_len + 0.5);
    s.total_rate = s.total_sum / mean_len;
    s.data_rate = s.data_sum / mean_len;
    s.knowledge_rate = s.knowledge_sum / mean_len;
    return s;
}

}  // namespace endd::uncertainty
