#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dermgen {

/// Fitzpatrick skin-tone grades, lightest (I) to darkest (VI).
enum class FitzpatrickGrade : int { I = 0, II, III, IV, V, VI };

inline constexpr int kFitzpatrickGradeCount = 6;

const char* grade_name(FitzpatrickGrade g);
std::optional<FitzpatrickGrade> parse_grade(const std::string& name);

struct SkinTone {
    FitzpatrickGrade grade = FitzpatrickGrade::I;
    std::string descriptor; // used verbatim as the prompt's skin-tone slot

    bool operator==(const SkinTone&) const = default;
};

/// Built-in Fitzpatrick descriptor wording, used unless a spec file
/// overrides it with its own `tone_descriptors` map.
const std::array<std::string, kFitzpatrickGradeCount>& default_tone_descriptors();

/// One filled-in copy of the four-slot prompt template. Slot order in the
/// rendered prompt is fixed: visual cues, sensation, physical location,
/// skin tone. The sensation slot may be empty and is then skipped entirely.
struct PromptSlots {
    std::string visual_cues;
    std::string sensation;
    std::string physical_location;
    SkinTone skin_tone;

    bool operator==(const PromptSlots&) const = default;
};

/// Keyword pools for one condition, parsed from a spec file.
struct ConditionSpec {
    std::string label;        // [a-z0-9_]+, unique within a collection
    std::string display_name;
    std::vector<std::string> visual_cues_pool; // non-empty
    std::vector<std::string> sensation_pool;   // may be empty
    std::vector<std::string> location_pool;    // non-empty
    std::vector<SkinTone> tones;               // default: all six grades
};

/// Which pool entries produced a PromptSlots; -1 marks an absent sensation.
struct SlotIndices {
    int visual = 0;
    int sensation = -1;
    int location = 0;
    int tone = 0;

    bool operator==(const SlotIndices&) const = default;
};

struct PromptInstantiation {
    std::string condition_label;
    PromptSlots slots;
    std::string rendered; // always equals render_prompt(slots)
    SlotIndices slot_indices;

    bool operator==(const PromptInstantiation&) const = default;
};

/// Join the non-empty slot texts with ", " in the fixed template order.
std::string render_prompt(const PromptSlots& slots);

/// Parse a JSON condition-spec document. See README for the concrete syntax.
/// Throws Error with MissingField / DuplicateLabel / EmptyPool /
/// MalformedFile codes.
std::vector<ConditionSpec> parse_spec_file(const std::string& path);
std::vector<ConditionSpec> parse_spec_text(const std::string& text, const std::string& origin);

/// Deterministically enumerate `per_condition` prompt instantiations.
/// Tone grades are balanced to within one; pool entries are drawn with a
/// SplitMix64 stream seeded from (seed, spec.label). Pure function of its
/// arguments.
std::vector<PromptInstantiation> enumerate_instantiations(const ConditionSpec& spec,
                                                          int per_condition,
                                                          uint64_t seed);

bool is_valid_label(const std::string& label);

} // namespace dermgen
