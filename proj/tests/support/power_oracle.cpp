#include "power_oracle.hpp"

#include <vector>

namespace oracle {

using namespace skillsight::power;

namespace {

// GEMM shapes (m, k, n) a layer performs; MACs = sum m*k*n.
struct Gemm {
  Count m, k, n;
};

std::vector<Gemm> gemms_of(const Layer& l) {
  std::vector<Gemm> g;
  auto attention = [&](Count groups, Count size, Count d) {
    for (Count i = 0; i < groups; ++i) {
      g.push_back({size, d, size});  // q k^T
      g.push_back({size, size, d});  // probs v
    }
  };
  switch (l.kind) {
    case LayerKind::kLinear:
      g.push_back({l.tokens, l.in, l.out});
      break;
    case LayerKind::kAttentionBlock:
      g.push_back({l.tokens, l.width, 3 * l.width});
      attention(1, l.tokens, l.width);
      g.push_back({l.tokens, l.width, l.width});
      g.push_back({l.tokens, l.width, l.ffn});
      g.push_back({l.tokens, l.ffn, l.width});
      break;
    case LayerKind::kDividedAttentionBlock: {
      const Count fp = l.frames * l.patches, fs = l.frames * (1 + l.patches), n = 1 + fp;
      g.push_back({fp, l.width, 3 * l.width});
      attention(l.patches, l.frames, l.width);
      g.push_back({fp, l.width, l.width});
      g.push_back({fp, l.width, l.width});
      g.push_back({fs, l.width, 3 * l.width});
      attention(l.frames, 1 + l.patches, l.width);
      g.push_back({fs, l.width, l.width});
      g.push_back({n, l.width, l.ffn});
      g.push_back({n, l.ffn, l.width});
      break;
    }
    case LayerKind::kConv: {
      const Count oh = (l.height + 2 * l.pad - l.kernel) / l.stride + 1;
      const Count ow = (l.image_width + 2 * l.pad - l.kernel) / l.stride + 1;
      g.push_back({l.batch * oh * ow, l.in_channels * l.kernel * l.kernel, l.out_channels});
      break;
    }
    case LayerKind::kMlp:
      for (std::size_t i = 0; i + 1 < l.widths.size(); ++i) g.push_back({l.tokens, l.widths[i], l.widths[i + 1]});
      break;
    default:
      break;
  }
  return g;
}

}  // namespace

Count oracle_macs(const Architecture& a) {
  Count total = 0;
  for (const auto& l : a.layers) {
    for (Count r = 0; r < l.repeat; ++r) {
      for (const auto& g : gemms_of(l)) total += g.m * g.k * g.n;
    }
  }
  return total;
}

Layer random_layer(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 6);
  std::uniform_int_distribution<Count> small(1, 24);
  Layer l;
  l.kind = static_cast<LayerKind>(kind(rng));
  l.repeat = std::uniform_int_distribution<Count>(1, 3)(rng);
  l.tokens = small(rng);
  switch (l.kind) {
    case LayerKind::kLinear:
      l.in = small(rng);
      l.out = small(rng);
      break;
    case LayerKind::kAttentionBlock:
    case LayerKind::kDividedAttentionBlock:
      l.heads = std::uniform_int_distribution<Count>(1, 4)(rng);
      l.width = l.heads * small(rng);
      l.ffn = small(rng) * 4;
      l.frames = small(rng) % 8 + 1;
      l.patches = small(rng);
      break;
    case LayerKind::kConv:
      l.in_channels = small(rng) % 4 + 1;
      l.out_channels = small(rng);
      l.kernel = small(rng) % 5 + 1;
      l.stride = small(rng) % 3 + 1;
      l.pad = small(rng) % 2;
      l.height = l.kernel + small(rng);
      l.image_width = l.kernel + small(rng);
      l.batch = small(rng) % 3 + 1;
      break;
    case LayerKind::kMlp:
      l.widths = {small(rng), small(rng), small(rng)};
      break;
    case LayerKind::kNorm:
    case LayerKind::kElementwise:
      l.width = small(rng);
      break;
  }
  return l;
}

}  // namespace oracle
