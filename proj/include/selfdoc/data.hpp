#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "selfdoc/common.hpp"
#include "selfdoc/rng.hpp"

namespace selfdoc {

enum class Category { kTextBlock, kTitle, kList, kTable, kFigure };
enum class EntityLabel { kHeader = 0, kQuestion = 1, kAnswer = 2, kOther = 3 };
inline constexpr int kNumEntityClasses = 4;

std::string to_string(Category c);
std::string to_string(EntityLabel e);
Category category_from_string(const std::string& s);
EntityLabel entity_from_string(const std::string& s);

/// One detected document component: normalized page coordinates plus one
/// feature vector per modality.
struct Proposal {
  std::array<Scalar, 4> bbox{};  // x1, y1, x2, y2 in [0,1], x1<=x2, y1<=y2
  std::vector<Scalar> lang;
  std::vector<Scalar> visn;
  std::optional<Category> category;
  std::optional<EntityLabel> entity_label;
  std::optional<std::string> text;  // informational only
};

struct Document {
  std::string doc_id;
  std::vector<Proposal> proposals;
  std::optional<int> class_label;
  std::vector<Scalar> global_visual;  // empty when absent
};

struct CorpusHeader {
  int version = 1;
  int d_lang = 0;
  int d_visn = 0;
  int d_global = 0;        // 0 = documents carry no global vector
  std::string sidecar;     // optional float32 feature sidecar, relative path
};

struct Corpus {
  CorpusHeader header;
  std::vector<Document> docs;
  int skipped_empty = 0;  // empty documents dropped at load, with a warning
};

/// JSON Lines reader; line 1 is the header object. Malformed records raise
/// ConfigError with the offending line number. Empty documents are skipped
/// with a counted warning.
Corpus load_corpus(const std::string& path);

/// Canonical writer: compact JSON, sorted keys, one document per line. With
/// use_sidecar, feature vectors go to "<path>.bin" as little-endian float32
/// and the JSON carries element offsets instead of arrays.
void save_corpus(const std::string& path, const Corpus& corpus, bool use_sidecar = false);

/// [LANG]/[VISN] special proposals: modality-wise means of the document's
/// features, full-page bbox. Each carries both modality slots so the two
/// branches stay index-aligned at position 0.
std::pair<Proposal, Proposal> make_special_tokens(const Document& doc);

/// Keeps the document intact when it fits, otherwise picks a uniform random
/// size-max_len subset preserving the original relative order.
Document truncate_or_keep(const Document& doc, int max_len, Rng& rng);

/// Padded per-document tensors. Sequence layout per modality:
/// [SPECIAL, p_1 .. p_N, SEP, pad...]; the SEP slot holds zeros here and is
/// substituted by a learned vector at input projection.
struct BatchItem {
  std::string doc_id;
  int n_prop = 0;
  int sep_index = 0;  // n_prop + 1
  std::vector<Scalar> lang;  // L x d_lang
  std::vector<Scalar> visn;  // L x d_visn
  std::vector<Scalar> pos;   // L x 4
  std::vector<uint8_t> valid;  // L; true on special + proposals + SEP
  std::vector<int> entity_labels;  // n_prop entries, -1 when absent
  int class_label = -1;
  std::vector<Scalar> global_visual;
};

struct Batch {
  int L = 0;
  int d_lang = 0;
  int d_visn = 0;
  std::vector<BatchItem> items;
};

Batch make_batch(const std::vector<const Document*>& group, int d_lang, int d_visn);

/// Length-bucketed batching: documents with N <= threshold never share a
/// batch with documents beyond it; each batch is padded to its own longest
/// sequence. Document order within a bucket is preserved.
std::vector<Batch> bucket_batches(const std::vector<const Document*>& docs, int threshold,
                                  int batch_size, int d_lang, int d_visn);

}  // namespace selfdoc
