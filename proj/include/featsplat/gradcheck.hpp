#pragma once

// Central finite-difference checks of every hand-written adjoint.

#include <cstdint>
#include <string>
#include <vector>

namespace fsplat {

struct GradcheckOptions {
    std::string scope = "all";  // all, renderer, body, texture, temporal, rerender, loss, end_to_end
    std::uint64_t seed = 11;
    int samples = 10;           // coordinates checked per class (half largest-gradient, half random)
    double step = 1e-6;
    double threshold = 1e-4;
    double end_to_end_threshold = 1e-3;
    std::string corrupt;        // class whose analytic gradient is scaled by 1.05 (harness self-test)
};

struct GradcheckEntry {
    std::string name;        // parameter class, e.g. "gaussian.position"
    double worst_rel_error = 0;
    double threshold = 0;
    int checked = 0;

    bool passed() const { return worst_rel_error < threshold; }
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double seconds = 0;

    bool passed() const;
    std::string format() const;
};

// Throws InvalidArgument for an unknown scope.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace fsplat
