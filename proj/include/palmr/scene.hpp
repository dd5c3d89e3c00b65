#ifndef PALMR_SCENE_HPP_
#define PALMR_SCENE_HPP_

// Synthetic symbolic scenes, their complete fact sets, question templates and
// the structured pseudo ground-truth caption.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace palmr {

enum class Shape : std::uint8_t { kCircle, kSquare, kTriangle };
enum class Color : std::uint8_t { kRed, kBlue, kGreen };
enum class Size : std::uint8_t { kSmall, kLarge };
enum class AttributeKind : std::uint8_t { kShape, kColor, kSize };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 3;
inline constexpr int kNumSizes = 2;
inline constexpr int kNumAttributeKinds = 3;
// Flattened (kind, value) pairs: 3 shapes, 3 colors, 2 sizes.
inline constexpr int kNumAttributeClasses = kNumShapes + kNumColors + kNumSizes;
// Hard ceiling on objects per scene; the vocabulary is sized against it.
inline constexpr int kMaxObjectsLimit = 8;

int num_values(AttributeKind kind);
std::string_view kind_name(AttributeKind kind);
std::string_view value_name(AttributeKind kind, int value);
std::optional<AttributeKind> kind_from_name(std::string_view name);
std::optional<int> value_from_name(AttributeKind kind, std::string_view name);

// Index of (kind, value) in [0, kNumAttributeClasses).
int attribute_class(AttributeKind kind, int value);
AttributeKind class_kind(int attribute_class);
int class_value(int attribute_class);

struct Position {
  int row = 0;
  int col = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

struct Object {
  int id = 0;
  Shape shape = Shape::kCircle;
  Color color = Color::kRed;
  Size size = Size::kSmall;
  Position position;

  int value_of(AttributeKind kind) const;
  friend bool operator==(const Object&, const Object&) = default;
};

struct SceneConfig {
  int grid_size = 4;
  int min_objects = 1;
  int max_objects = 8;

  // Throws std::invalid_argument.
  void validate() const;
};

struct Scene {
  std::string scene_id;
  int grid_size = 4;
  std::vector<Object> objects;

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Pure function of (seed, cfg).
Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

// Throws std::invalid_argument naming the violated invariant.
void validate_scene(const Scene& scene, int max_objects = kMaxObjectsLimit);

// ---------------------------------------------------------------------------
// Facts

enum class Predicate : std::uint8_t {
  kCountByAttribute,  // (kind, value) -> count
  kHasObject,         // (shape, color) -> bool
  kLeftOf,            // (obj_i, obj_j) -> bool
  kAbove,             // (obj_i, obj_j) -> bool
  kAttributeOf,       // (obj, kind) -> value index
};

std::string_view predicate_name(Predicate p);
std::optional<Predicate> predicate_from_name(std::string_view name);

struct FactKey {
  Predicate predicate = Predicate::kCountByAttribute;
  int a = 0;
  int b = 0;
  auto operator<=>(const FactKey&) const = default;
};

struct VisualFact {
  FactKey key;
  int value = 0;
  auto operator<=>(const VisualFact&) const = default;
};

// Claims share the fact schema; the value is what the claim asserts.
using VisualClaim = VisualFact;

// Canonical text form, e.g. "count_by_attribute(color,red)=3".
std::string to_string(const VisualFact& fact);

// Sorted, key-unique set of facts.
class FactSet {
 public:
  FactSet() = default;
  // Sorts; throws std::invalid_argument on duplicate keys.
  explicit FactSet(std::vector<VisualFact> facts);

  std::optional<int> find(const FactKey& key) const;
  std::size_t size() const { return facts_.size(); }
  const std::vector<VisualFact>& facts() const { return facts_; }
  auto begin() const { return facts_.begin(); }
  auto end() const { return facts_.end(); }

  friend bool operator==(const FactSet&, const FactSet&) = default;

 private:
  std::vector<VisualFact> facts_;
};

FactSet enumerate_facts(const Scene& scene);

// Closed form: 8 counts + 9 has_object + 2n(n-1) relations + 3n attributes.
std::size_t expected_fact_count(std::size_t num_objects);

// ---------------------------------------------------------------------------
// Questions

enum class QuestionTemplate : std::uint8_t {
  kCount,            // params (kind, value)
  kAttributeLookup,  // params (obj, kind)
  kComparison,       // params (kind, value_a, value_b): more a than b?
  kRelation,         // params (0=left_of / 1=above, obj_i, obj_j)
};
inline constexpr int kNumTemplates = 4;

std::string_view template_name(QuestionTemplate t);
std::optional<QuestionTemplate> template_from_name(std::string_view name);

struct Question {
  QuestionTemplate template_id = QuestionTemplate::kCount;
  std::array<int, 3> params{};
  std::string gold_answer;

  friend bool operator==(const Question&, const Question&) = default;
};

// Recoverable: the template cannot be instantiated on this scene.
class TemplateNotApplicable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Gold answer is computed from enumerate_facts(scene) only.
Question generate_question(const Scene& scene, QuestionTemplate template_id,
                           std::uint64_t seed);

// Answers a question using nothing but the fact set. Throws
// std::invalid_argument when the fact set lacks a required fact.
std::string answer_from_facts(const Question& question, const FactSet& facts);

std::string question_text(const Question& question);

// ---------------------------------------------------------------------------
// Samples and the structured caption

struct Sample {
  std::string sample_id;
  Scene scene;
  Question question;
  std::string domain_tag;

  friend bool operator==(const Sample&, const Sample&) = default;
};

// One fact per line: object lines by id, then relation lines sorted.
struct StructuredCaption {
  std::string text;
  friend bool operator==(const StructuredCaption&,
                         const StructuredCaption&) = default;
};

class CaptionParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

StructuredCaption render_pseudo_gt(const Scene& scene);

// Inverse of render_pseudo_gt; throws CaptionParseError.
FactSet parse_caption(const StructuredCaption& caption);

nlohmann::json to_json(const Scene& scene);
nlohmann::json to_json(const Question& question);
nlohmann::json to_json(const Sample& sample);
Scene scene_from_json(const nlohmann::json& j);
Question question_from_json(const nlohmann::json& j);
Sample sample_from_json(const nlohmann::json& j);

}  // namespace palmr

#endif  // PALMR_SCENE_HPP_
