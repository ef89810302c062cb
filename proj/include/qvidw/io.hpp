#pragma once

#include <string>

#include <json.hpp>

#include "qvidw/convex_sets.hpp"
#include "qvidw/direct_solver.hpp"
#include "qvidw/dw_engine.hpp"
#include "qvidw/problem_library.hpp"
#include "qvidw/qvi_model.hpp"

namespace qvidw {

using nlohmann::json;

// Set descriptors round-trip as {"type": "...", parameters...}.  Box bounds
// use null for an unbounded side, since JSON has no infinity literal.
json set_to_json(const ConvexSet& set);
ConvexSet set_from_json(const json& j);

// Problem files carry the operator in affine form and the coupled
// constraints as a tagged builtin with its defining data, so a load rebuilds
// the saved problem exactly through the library constructors.  Closure-only
// problems stay code-level: the QviProblem overload serializes only affine
// problems without coupled constraints.
json problem_to_json(const WalrasianData& data);
json problem_to_json(const MovSetData& data);
json problem_to_json(const QviProblem& problem);
QviProblem problem_from_json(const json& j);

void save_problem(const json& problem_file, const std::string& path);
QviProblem load_problem(const std::string& path);

json record_to_json(const IterationRecord& record);
json solution_to_json(const QviSolution& solution);
json report_to_json(const DwReport& report);
json direct_result_to_json(const DirectResult& result);

}  // namespace qvidw
