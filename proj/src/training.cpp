#include "graft/training.hpp"

namespace graft {

namespace {

const char* kNamePool[] = {
    "alpha", "bravo",  "charlie", "delta",  "echo",   "foxtrot", "golf",   "hotel",
    "india", "juliet", "kilo",    "lima",   "mike",   "november", "oscar",  "papa",
    "quebec", "romeo", "sierra",  "tango",  "uniform", "victor",  "whiskey", "xray",
    "yankee", "zulu"};
constexpr std::size_t kNamePoolSize = sizeof(kNamePool) / sizeof(kNamePool[0]);

}  // namespace

std::vector<DataSchema> make_synthetic_direction_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw config_error("synthetic dataset: n must be at least 1");
  std::vector<DataSchema> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::from(seed, i, 0x51D);
    const std::size_t a = rng.below(kNamePoolSize);
    std::size_t b = rng.below(kNamePoolSize - 1);
    if (b >= a) ++b;  // distinct names
    std::string first = kNamePool[a];
    std::string second = kNamePool[b];

    // Which listed segment is the preceder is an independent coin flip, so
    // the segment order carries no signal about the relation direction.
    const bool precedes_first = rng.below(2) == 0;
    std::string target =
        precedes_first ? first + " precedes " + second : second + " precedes " + first;
    std::vector<Segment> segments = {{first, 0, Role::source},
                                     {second, 0, Role::source},
                                     {target, 1, Role::target}};
    std::vector<Tuple> tuples =
        precedes_first ? std::vector<Tuple>{{0, "precedes", 1}, {1, "follows", 0}}
                       : std::vector<Tuple>{{0, "follows", 1}, {1, "precedes", 0}};
    out.push_back(assemble_schema("direction", std::move(segments), std::move(tuples)));
  }
  return out;
}

}  // namespace graft
