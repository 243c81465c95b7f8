#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace latentfuse::acceptance {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct AcceptanceOptions {
    /// Scratch directory for the shared dataset, model and CLI runs.
    std::filesystem::path work_dir = "acceptance_work";
    /// Criteria to run (empty: all ten).
    std::vector<int> only;
    unsigned threads = 1;
};

/// Runs the acceptance criteria in order, reporting each result through
/// `on_result` as soon as it is known.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const std::function<void(const CriterionResult&)>& on_result = {});

/// "PASS  3 cs-recovery-trend  <detail>  (12.3 s)"
std::string format_result(const CriterionResult& result);

}  // namespace latentfuse::acceptance
