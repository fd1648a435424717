#ifndef ENDD_UNCERTAINTY_HPP
#define ENDD_UNCERTAINTY_HPP

#include <vector>

#include "endd/dirmath.hpp"

namespace endd::uncertainty {

struct TokenUncertainty {
    int position = 0;
    dirmath::UncertaintyTriple triple;
};

TokenUncertainty token_uncertainty_ensemble(const dirmath::TokenPosteriorSet& s,
                                            int position = 0);
TokenUncertainty token_uncertainty_dirichlet(const dirmath::DirichletParams& d,
                                             int position = 0);

// Per-sequence sums over token positions plus length-normalized rates.
struct SequenceUncertainty {
    double total_sum = 0.0;
    double data_sum = 0.0;
    double knowledge_sum = 0.0;
    int length = 0;
    double total_rate = 0.0;
    double data_rate = 0.0;
    double knowledge_rate = 0.0;
};

SequenceUncertainty sequence_uncertainty(const std::vector<TokenUncertainty>& tokens);

// Monte-Carlo version over S sampled decodes (sums averaged over samples,
// rates normalized by the mean sample length). The toolkit's evaluation
// uses the single greedy output, i.e. S = 1.
SequenceUncertainty sequence_uncertainty_sampled(
    const std::vector<std::vector<TokenUncertainty>>& samples);

}  // namespace endd::uncertainty

#endif
