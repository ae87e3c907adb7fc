// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <string>
#include <string_view>

namespace hvqa::prompts {

/// Zero-shot evaluation prompt, sent alongside the image.
inline constexpr std::string_view kZeroShot =
    R"(You are a highly specialized OCR model that processes images containing text and numbers. Your task is to perform character-level OCR and categorize each character based on its clarity. If you are unable to recognize a character or number, you must explicitly refuse to recognize it. For each other readable character, categorize it as either "clear" or "not clear enough". Finally, generate an output in the following format:
• Clear char-level OCR: List characters that are clearly recognize, separated by spaces.
• Not clear enough char-level OCR: List characters that are recognized but not clear enough, separated by spaces.
• Clear number: Count of numbers that are clearly recognized.
• Not clear enough number: Count of numbers that are recognized but not clear enough.
• Final OCR: Compile all recognized characters and numbers into a single output, maintaining their original order.
Output Format:
{
    "clear char-level OCR": "0 1 5 S t i t i",
    "not clear enough char-level OCR": "2",
    "clear number": 8,
    "not clear enough number": 1,
    "final OCR": "2015 S ti ti"
}
)";

inline constexpr std::string_view kQuestionSlot = "{question}";
inline constexpr std::string_view kCaptionSlot = "{caption}";
inline constexpr std::string_view kCharInfoSlot = "{character information}";

/// Cold-start reasoning synthesis template with three slots.
inline constexpr std::string_view kColdStart =
    R"(Answer the question and provide your reasoning process, including the following:
1. Simulate image reasoning: Treat the image caption as an image. Simulate reasoning by imagining you are looking at the image, and act as if you can see it. However, avoid visualization as a step in the reasoning process.
2. Direct visual language: Frame observations as if you are directly viewing the image (e.g., “The image shows...”). Avoid reasoning through image caption or description.
3. Forbidden phrases: Avoid phrases like “based on the caption”, “based on the description”, “visualizing the image”, "the OCR results given".
4. You need output the final OCR in the end.
Question: output the reasoning process to get the result as below.
Question: {question}
Image Content: {caption}.
Character info: {character information}.
)";

/// Fills the template's slots in one left-to-right pass: slot values are
/// inserted literally and never rescanned for further slots.
inline std::string fill_coldstart(std::string_view question, std::string_view caption,
                                  std::string_view char_info) {
  std::string out;
  out.reserve(kColdStart.size() + question.size() + caption.size() + char_info.size());
  std::size_t pos = 0;
  while (pos < kColdStart.size()) {
    const auto brace = kColdStart.find('{', pos);
    if (brace == std::string_view::npos) {
      out.append(kColdStart.substr(pos));
      break;
    }
    out.append(kColdStart.substr(pos, brace - pos));
    const auto rest = kColdStart.substr(brace);
    if (rest.starts_with(kQuestionSlot)) {
      out.append(question);
      pos = brace + kQuestionSlot.size();
    } else if (rest.starts_with(kCaptionSlot)) {
      out.append(caption);
      pos = brace + kCaptionSlot.size();
    } else if (rest.starts_with(kCharInfoSlot)) {
      out.append(char_info);
      pos = brace + kCharInfoSlot.size();
    } else {
      out.push_back('{');
      pos = brace + 1;
    }
  }
  return out;
}

}  // namespace hvqa::prompts
