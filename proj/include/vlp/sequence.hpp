#pragma once

#include <cstdint>
#include <vector>

namespace vlp {

enum class Role : uint8_t { Cls, Text, Sep, Region, Pad };

// Position-by-position plan for a joint sequence:
//   [CLS] w1..wT [SEP] v1..vI PAD...
// Built before any embedding so token/region masking can edit it in place.
struct Layout {
  std::vector<Role> roles;
  std::vector<int> token_ids;     // valid at Cls/Text/Sep positions, else -1
  std::vector<int> region_index;  // valid at Region positions, else -1
  std::vector<uint8_t> valid;     // attention mask; false at Pad
  int text_count = 0;
  int region_count = 0;

  int size() const { return static_cast<int>(roles.size()); }
  int content_size() const { return 2 + text_count + region_count; }
  int text_begin() const { return 1; }
  int sep_pos() const { return 1 + text_count; }
  int region_begin() const { return 2 + text_count; }
};

// How many text tokens and regions survive the length budget: text keeps a
// tail-truncated budget of max_seq_len-2-I but never drops below
// min(T, text_floor); whatever budget remains caps the region count.
struct TruncationResult {
  int text_keep = 0;
  int region_keep = 0;
};
TruncationResult truncation_budget(int num_tokens, int num_regions, int max_seq_len,
                                   int text_floor = 16);

// Applies the truncation policy and lays the sequence out; pad_to extends
// with PAD positions (0 = no padding). Throws if both inputs are empty or
// the result cannot fit max_seq_len.
Layout build_layout(const std::vector<int>& token_ids, int num_regions, int max_seq_len,
                    int pad_to = 0);

}  // namespace vlp
