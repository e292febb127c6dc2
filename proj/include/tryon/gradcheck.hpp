#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tryon
{
    struct GradcheckResult
    {
        std::string name;
        double error = 0.0;  // relative, |fd - analytic| / |fd|
        double tolerance = 0.0;
        double seconds = 0.0;

        bool passed() const { return error < tolerance; }
    };

    /// Central differences against every hand-written backward pass, each on a small fixed problem.
    std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed = 0);
}  // namespace tryon
