#pragma once

#include <array>
#include <string_view>

namespace kinact {

// Action label ids. Lower-limb labels (motions and transitory motions) are
// 1..7, upper-limb labels (ordering and background actions) are 8..17.
namespace label {
inline constexpr int kStanding = 1;
inline constexpr int kWalking = 2;
inline constexpr int kSitting = 3;
inline constexpr int kSquatting = 4;
inline constexpr int kStandingUp = 5;
inline constexpr int kSittingDown = 6;
inline constexpr int kSquattingDown = 7;
inline constexpr int kTwoArmsPicking = 8;
inline constexpr int kRightArmPicking = 9;
inline constexpr int kLeftArmPicking = 10;
inline constexpr int kIdle = 11;
inline constexpr int kTwoThumbsUp = 12;
inline constexpr int kComeSignRight = 13;
inline constexpr int kComeSignLeft = 14;
inline constexpr int kComeSignTwoArms = 15;
inline constexpr int kStopSign = 16;
inline constexpr int kBackground = 17;
}  // namespace label

inline constexpr int kFirstLowerLabel = 1;
inline constexpr int kNumLowerLabels = 7;
inline constexpr int kFirstUpperLabel = 8;
inline constexpr int kNumUpperLabels = 10;
inline constexpr int kNumLabels = 17;

enum class LabelCategory { kMotion, kTransitory, kOrdering, kBackground };

inline constexpr bool is_lower_label(int id) { return id >= 1 && id <= 7; }
inline constexpr bool is_upper_label(int id) { return id >= 8 && id <= 17; }

LabelCategory label_category(int id);
std::string_view label_name(int id);
std::string_view category_name(LabelCategory category);

}  // namespace kinact
