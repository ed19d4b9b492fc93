#pragma once

#include <algorithm>
#include <cmath>

#include "forage/fitness.hpp"

namespace stubs {

using namespace forage;

// Stub runner: the root walks straight at the target with a fixed step and
// absorbs it when within 2 m, like an ideal forager. Positions are computed
// from the start of each leg so rounding does not accumulate.
EpisodeRunner straight_walker(double step) {
  return [step](const Organism&, const EpisodeSpec& spec) {
    EpisodeRecord rec;
    Vec2 start{0, 0};
    Vec2 target = spec.first_target;
    Vec2 pos = start;
    std::size_t k = 0;
    long long leg = 0;
    const long long timer = std::llround(spec.timer / 0.02);
    long long left = timer;
    rec.p0 = {0, 0, 0.1};
    rec.rows.push_back({0, 0.0, rec.p0, (target - pos).norm(), 0});
    std::uint64_t n = 0;
    bool done = false;
    while (left > 0) {
      if (!done) {
        const Vec2 to = target - start;
        const double len = to.norm();
        ++leg;
        pos = start + to * (std::min(step * static_cast<double>(leg), len) / len);
      }
      ++n;
      --left;
      const double d = (target - pos).norm();
      rec.rows.push_back({n, static_cast<double>(n) * 0.02, {pos.x, pos.y, 0.1}, d, k});
      if (!done && d <= 2.0) {
        rec.absorptions.push_back({k, {pos.x, pos.y, 0.1}, n});
        if (k + 1 < spec.sequence_length()) {
          start = pos;
          target = pos + spec.next_offsets[k];
          leg = 0;
          ++k;
          left = timer;
        } else {
          done = true;
          if (spec.stop_on_final_absorption) break;
        }
      }
    }
    rec.simulated_steps = n;
    rec.pf = rec.rows.back().root;
    return rec;
  };
}

}  // namespace stubs
