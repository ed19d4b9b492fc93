#include "testing.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include "fixtures.hpp"
#include "forage/morphogenome.hpp"

using namespace forage;

namespace {

Genome sized_genome(std::size_t blocks, std::size_t neurons, std::size_t wiring) {
  Genome g;
  for (std::size_t i = 0; i < blocks; ++i)
    g.blocks.push_back(fixtures::block(i == 0 ? -1 : static_cast<int>(i - 1), {0.3, 0.3, 0.3}));
  for (std::size_t i = 0; i < neurons; ++i)
    g.neurons.push_back(fixtures::neuron(NeuronKind::Sum, {0.1, 0.2, 0.3},
                                         {fixtures::sensor(0), fixtures::constant(0.5), fixtures::constant(-0.5)}));
  for (std::size_t i = 0; i < wiring; ++i)
    g.wiring.push_back({static_cast<int>(i % neurons), static_cast<int>(i % (blocks - 1))});
  return g;
}

bool within_ranges(const Genome& g) {
  using namespace ranges;
  for (const auto& b : g.blocks) {
    for (int k = 0; k < 3; ++k)
      if (b.dims[k] < kDimMin || b.dims[k] > kDimMax) return false;
    if (b.limit_lo < -kPi || b.limit_hi > kPi || !(b.limit_lo < b.limit_hi)) return false;
    if (b.max_torque < kTorqueMin || b.max_torque > kTorqueMax) return false;
  }
  for (const auto& n : g.neurons) {
    for (double p : n.params)
      if (p < kParamMin || p > kParamMax) return false;
    for (const auto& in : n.inputs)
      if (in.weight < kWeightMin || in.weight > kWeightMax) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("RandomGenome.SeedSevenIsTreeShaped") {
  Genome g = random_genome(7);
  CHECK_EQ(check_invariants(g), "");
  CHECK_GE(g.blocks.size(), 1u);
  CHECK_LE(g.blocks.size(), 8u);
  CHECK_EQ(g.blocks[0].parent, -1);
  for (std::size_t i = 1; i < g.blocks.size(); ++i) CHECK_LT(g.blocks[i].parent, static_cast<int>(i));
}

TEST_CASE("RandomGenome.Deterministic") { CHECK_EQ(random_genome(7), random_genome(7)); }

TEST_CASE("RandomGenome.ThousandSeedsAllTreeShapedAndSized") {
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Genome g = random_genome(s);
    REQUIRE_EQ(g.blocks[0].parent, -1);
    for (std::size_t i = 1; i < g.blocks.size(); ++i) REQUIRE_LT(g.blocks[i].parent, static_cast<int>(i));
    REQUIRE_LE(g.neurons.size(), 32u);
    // expected events at 1% per site fall in [1, 10]
    REQUIRE_GE(sites(g), 100u);
    REQUIRE_LE(sites(g), 1000u);
    { INFO("seed " << s); REQUIRE(validate(develop(g)).valid); }
  }
}

TEST_CASE("Sites.PerGeneCounts") {
  Genome g = sized_genome(4, 8, 3);
  CHECK_EQ(sites(g), 4u * 12 + 8u * 10 + 3u * 2);
  Genome bare = sized_genome(4, 8, 0);
  bare.neurons.clear();
  CHECK_EQ(sites(bare), 4u * 12);
  CHECK_EQ(sites(g), sites(g));
}

TEST_CASE("Mutate.RateZeroIsIdentity") {
  Genome g = random_genome(1);
  CHECK_EQ(mutate(g, 99, 0.0), g);
}

TEST_CASE("Mutate.RateOneKeepsInvariantsAndRanges") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Genome g = random_genome(s);
    auto out = mutate_counted(g, s + 1000, 1.0);
    CHECK_EQ(out.events, sites(g));
    CHECK_EQ(check_invariants(out.genome), "");
    CHECK(within_ranges(out.genome));
  }
}

TEST_CASE("Mutate.DevelopAfterMutationRespectsBounds") {
  Genome g = fixtures::four_block_genome();
  for (std::uint64_t s = 0; s < 500; ++s) {
    g = mutate(g, s, 0.2);
    Organism o = develop(g);
    for (std::size_t i = 0; i < o.blocks.size(); ++i) {
      for (int k = 0; k < 3; ++k) {
        REQUIRE_GE(o.blocks[i].half_extents[k] * 2.0, ranges::kDimMin - 1e-15);
        REQUIRE_LE(o.blocks[i].half_extents[k] * 2.0, ranges::kDimMax + 1e-15);
      }
      if (i > 0) {
        REQUIRE_GE(o.blocks[i].limit_lo, -kPi);
        REQUIRE_LE(o.blocks[i].limit_hi, kPi);
        REQUIRE_LT(o.blocks[i].limit_lo, o.blocks[i].limit_hi);
      }
    }
  }
}

TEST_CASE("Mutate.EventCountIsBinomial") {
  const Genome g = sized_genome(5, 42, 10);
  REQUIRE_EQ(sites(g), 500u);
  const int trials = 10000;
  const double rate = 0.01;
  std::vector<int> counts(501, 0);
  double sum = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto out = mutate_counted(g, static_cast<std::uint64_t>(t), rate);
    ++counts[out.events];
    sum += static_cast<double>(out.events);
  }
  CHECK_NEAR(sum / trials, 5.0, 0.3);

  // Chi-square goodness of fit against Binomial(500, 0.01), tails pooled so
  // every bin expects at least 5 observations.
  boost::math::binomial_distribution<double> bin(500, rate);
  std::vector<double> expected, observed;
  double exp_acc = 0.0, obs_acc = 0.0;
  for (int k = 0; k <= 500; ++k) {
    exp_acc += trials * boost::math::pdf(bin, k);
    obs_acc += counts[k];
    double rest = trials * boost::math::cdf(boost::math::complement(bin, k));
    if (exp_acc >= 5.0 && rest >= 5.0) {
      expected.push_back(exp_acc);
      observed.push_back(obs_acc);
      exp_acc = obs_acc = 0.0;
    }
  }
  expected.back() += exp_acc;
  observed.back() += obs_acc;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i)
    chi2 += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  boost::math::chi_squared_distribution<double> dist(static_cast<double>(expected.size() - 1));
  double p = boost::math::cdf(boost::math::complement(dist, chi2));
  { INFO("chi2 " << chi2 << " bins " << expected.size()); CHECK_GT(p, 0.01); }
}

TEST_CASE("Recombine.IdenticalParentsGiveParent") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Genome a = random_genome(s);
    CHECK_EQ(recombine(a, a, s), a);
  }
}

TEST_CASE("Recombine.CutAtZeroGivesSecondParent") {
  Genome a = random_genome(3), b = random_genome(4);
  Genome child = recombine_at(a, b, {0, 0, 0});
  Genome repaired = b;
  repair_references(repaired);
  CHECK_EQ(child, repaired);
  CHECK_EQ(child, b);
}

TEST_CASE("Recombine.ThousandPairsSatisfyInvariants") {
  int ok = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Genome a = random_genome(2 * s), b = random_genome(2 * s + 1);
    try {
      Genome c = recombine(a, b, s);
      { INFO("pair " << s); REQUIRE_EQ(check_invariants(c), ""); }
      ++ok;
    } catch (const Error& e) {
      REQUIRE_EQ(e.code(), ErrorCode::Degenerate);
    }
  }
  CHECK_GT(ok, 0);
}

TEST_CASE("Recombine.ChildTakesPrefixOfFirstAndSuffixOfSecond") {
  Genome a = sized_genome(4, 8, 3), b = sized_genome(4, 8, 3);
  for (auto& n : b.neurons) n.kind = NeuronKind::Max;
  Genome c = recombine_at(a, b, {0, 3, 0});
  for (std::size_t i = 0; i < c.neurons.size(); ++i)
    CHECK_EQ(c.neurons[i].kind, i < 3 ? NeuronKind::Sum : NeuronKind::Max);
}

TEST_CASE("Develop.SingleBlock") {
  Organism o = develop(fixtures::single_block_genome());
  CHECK_EQ(o.joint_count(), 0u);
  CHECK_EQ(o.sensors.count(), 3u);
}

TEST_CASE("Develop.FourBlocks") {
  Organism o = develop(fixtures::four_block_genome());
  CHECK_EQ(o.blocks.size(), 4u);
  CHECK_EQ(o.joint_count(), 3u);
  CHECK_EQ(o.sensors.joints, 3u);
  // child 1 sits on the root's +x face, child 2 on its -x face
  CHECK_DOUBLE_EQ(o.blocks[1].joint_point.x, 0.4);
  CHECK_DOUBLE_EQ(o.blocks[1].position.x, 0.6);
  CHECK_DOUBLE_EQ(o.blocks[2].position.x, -0.6);
  CHECK_DOUBLE_EQ(o.blocks[3].position.x, 0.95);
}

TEST_CASE("Develop.Deterministic") {
  Genome g = random_genome(12);
  CHECK_EQ(develop(g), develop(g));
}

TEST_CASE("Develop.ZeroVolumeIsDegenerate") {
  Genome g = fixtures::four_block_genome();
  g.blocks[2].dims.y = 0.0;
  try {
    develop(g);
    FAIL("no exception");
  } catch (const Error& e) {
    CHECK_EQ(e.code(), ErrorCode::Degenerate);
  }
}

TEST_CASE("Validate.FourBlockFixtureIsValid") { CHECK(validate(develop(fixtures::four_block_genome())).valid); }

TEST_CASE("Validate.OneBlock") {
  auto r = validate(develop(fixtures::single_block_genome()));
  CHECK_FALSE(r.valid);
  CHECK(r.has(InvalidReason::OnlyOneBlock));
}

TEST_CASE("Validate.EmptyWiring") {
  Genome g = fixtures::four_block_genome();
  g.wiring.clear();
  auto r = validate(develop(g));
  CHECK_FALSE(r.valid);
  CHECK(r.has(InvalidReason::MotorsDisconnected));
}

TEST_CASE("Validate.NoSensorOnMotorPath") {
  Genome g = fixtures::four_block_genome();
  g.neurons[2].inputs[0] = fixtures::constant(1.0);
  auto r = validate(develop(g));
  CHECK_FALSE(r.valid);
  CHECK_EQ(r.reasons, std::vector<InvalidReason>{InvalidReason::SensorsDisconnected});
}

TEST_CASE("Validate.JoinedBlocksMayOverlap") {
  Organism o = develop(fixtures::four_block_genome());
  o.blocks[1].position.x -= 0.1;  // sinks into its parent, the root
  CHECK(validate(o).valid);
}

TEST_CASE("Validate.NonAdjacentOverlapIsFlagged") {
  Organism o = develop(fixtures::four_block_genome());
  o.blocks[3].position = o.blocks[0].position;  // grandchild inside the root
  auto r = validate(o);
  CHECK_FALSE(r.valid);
  CHECK(r.has(InvalidReason::InitialInterpenetration));
}

TEST_CASE("Validate.ProbeRunsOnlyForOtherwiseValid") {
  int calls = 0;
  WorldProbe probe = [&](const Organism&) {
    ++calls;
    return true;
  };
  auto r = validate(develop(fixtures::four_block_genome()), probe);
  CHECK_EQ(r.reasons, std::vector<InvalidReason>{InvalidReason::Unstable});
  validate(develop(fixtures::single_block_genome()), probe);
  CHECK_EQ(calls, 1);
}

TEST_CASE("Validate.Pure") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Organism o = develop(mutate(random_genome(s), s, 0.3));
    CHECK_EQ(validate(o), validate(o));
  }
}

TEST_CASE("GenomeJson.RoundTripIsBitExact") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Genome g = mutate(random_genome(s), s, 0.5);
    std::string text = genome_to_string(g);
    Genome back = genome_from_string(text);
    REQUIRE_EQ(back, g);
    REQUIRE_EQ(genome_to_string(back), text);
  }
}

TEST_CASE("GenomeJson.FieldOrderIsStable") {
  std::string text = genome_to_string(fixtures::four_block_genome());
  auto pos = [&](const char* k) { return text.find(k); };
  CHECK_LT(pos("\"schema_version\""), pos("\"blocks\""));
  CHECK_LT(pos("\"blocks\""), pos("\"neurons\""));
  CHECK_LT(pos("\"neurons\""), pos("\"wiring\""));
}

TEST_CASE("GenomeJson.MalformedInputIsParseError") {
  try {
    genome_from_string("{\"blocks\": 3}");
    FAIL("no exception");
  } catch (const Error& e) {
    CHECK_EQ(e.code(), ErrorCode::Parse);
  }
}

TEST_CASE("GenomeJson.OrganismIdIsSixteenHex") {
  std::string id = organism_id(fixtures::four_block_genome());
  CHECK_EQ(id.size(), 16u);
  CHECK_EQ(id.find_first_not_of("0123456789abcdef"), std::string::npos);
  CHECK_NE(id, organism_id(random_genome(1)));
}
