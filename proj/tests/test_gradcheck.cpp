#include <doctest.h>

#include <set>
#include <string>

#include "dcse/gradcheck_suite.hpp"

using namespace dcse;

TEST_CASE("tiny gradient suite passes on several seeds") {
  for (std::uint64_t seed : {1, 2, 3}) {
    CAPTURE(seed);
    const auto cases = run_gradcheck_suite(GradCheckScale::tiny, seed);
    REQUIRE_FALSE(cases.empty());
    for (const auto& c : cases) {
      CAPTURE(c.name);
      CHECK(c.report.passed);
      CHECK(c.report.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("suite covers every op and both model losses") {
  const auto cases = run_gradcheck_suite(GradCheckScale::tiny, 1);
  std::set<std::string> names;
  for (const auto& c : cases) names.insert(c.name);
  for (const char* op : {"matmul", "matmul_nt", "add", "sub", "mul", "add_row", "scale", "scale_by", "relu", "abs",
                         "sigmoid", "softmax_rows", "layer_norm_rows", "masked_mean_rows", "cosine", "concat_cols",
                         "slice_cols", "slice_rows", "pad_rows", "mask_outer", "sum_all", "element", "gather_rows",
                         "mean_of", "stack_scalars", "softmax_cross_entropy"}) {
    CAPTURE(op);
    CHECK(names.count(op) == 1);
  }
  bool has_dcse = false, has_siamese = false;
  for (const auto& n : names) {
    has_dcse = has_dcse || n.rfind("dialoguecse_loss", 0) == 0;
    has_siamese = has_siamese || n.rfind("siamese_loss", 0) == 0;
  }
  CHECK(has_dcse);
  CHECK(has_siamese);
}

TEST_CASE("scale names parse") {
  CHECK(parse_gradcheck_scale("tiny") == GradCheckScale::tiny);
  CHECK(parse_gradcheck_scale("small") == GradCheckScale::small);
  CHECK_THROWS_AS(parse_gradcheck_scale("huge"), UsageError);
}
