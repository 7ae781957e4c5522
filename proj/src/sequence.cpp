#include "vlp/sequence.hpp"

#include <algorithm>
#include <string>

#include "vlp/errors.hpp"
#include "vlp/vocab.hpp"

namespace vlp {

TruncationResult truncation_budget(int num_tokens, int num_regions, int max_seq_len,
                                   int text_floor) {
  TruncationResult r;
  const int text_budget = std::max(text_floor, max_seq_len - 2 - num_regions);
  r.text_keep = std::min(num_tokens, text_budget);
  r.region_keep = std::clamp(max_seq_len - 2 - r.text_keep, 0, num_regions);
  return r;
}

Layout build_layout(const std::vector<int>& token_ids, int num_regions, int max_seq_len,
                    int pad_to) {
  if (token_ids.empty() && num_regions == 0)
    throw ValueError("cannot assemble a sequence with no tokens and no regions");
  const TruncationResult keep =
      truncation_budget(static_cast<int>(token_ids.size()), num_regions, max_seq_len);
  const int n = 2 + keep.text_keep + keep.region_keep;
  if (n > max_seq_len)
    throw ValueError("sequence of length " + std::to_string(n) +
                     " does not fit max_seq_len=" + std::to_string(max_seq_len) +
                     " even after truncation");
  const int total = std::max(n, pad_to);
  if (total > max_seq_len)
    throw ValueError("pad_to=" + std::to_string(pad_to) + " exceeds max_seq_len=" +
                     std::to_string(max_seq_len));

  Layout out;
  out.text_count = keep.text_keep;
  out.region_count = keep.region_keep;
  out.roles.assign(static_cast<size_t>(total), Role::Pad);
  out.token_ids.assign(static_cast<size_t>(total), -1);
  out.region_index.assign(static_cast<size_t>(total), -1);
  out.valid.assign(static_cast<size_t>(total), 0);

  out.roles[0] = Role::Cls;
  out.token_ids[0] = Vocabulary::kCls;
  for (int i = 0; i < keep.text_keep; ++i) {
    const size_t pos = static_cast<size_t>(1 + i);
    out.roles[pos] = Role::Text;
    out.token_ids[pos] = token_ids[static_cast<size_t>(i)];
  }
  const size_t sep = static_cast<size_t>(1 + keep.text_keep);
  out.roles[sep] = Role::Sep;
  out.token_ids[sep] = Vocabulary::kSep;
  for (int i = 0; i < keep.region_keep; ++i) {
    const size_t pos = sep + 1 + static_cast<size_t>(i);
    out.roles[pos] = Role::Region;
    out.region_index[pos] = i;
  }
  std::fill_n(out.valid.begin(), n, uint8_t{1});
  return out;
}

}  // namespace vlp
