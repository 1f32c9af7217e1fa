// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "memcorrupt/error.hpp"

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace memcorrupt {

class TemplateError : public Error {
public:
    using Error::Error;
};

using TemplateRow = std::map<std::string, std::string>;

/// Values available to a template. Lists drive `{#name}` sections.
struct TemplateContext {
    std::map<std::string, std::string> scalars;
    std::map<std::string, std::vector<TemplateRow>> lists;
};

/// Renders a prompt template.
///
/// Syntax:
///   `{name}`                 scalar substitution (unknown names throw)
///   `{#name}...{/name}`      repeat the body for each row of list `name`;
///                            for a scalar, render the body once if non-empty
///   `{#name|sep}...{/name}`  same, with `sep` between repetitions
///   `{{` and `}}`            literal braces
/// Anything else that starts with `{` is copied verbatim.
std::string render_template(std::string_view tmpl, const TemplateContext& context);

/// Loads editable prompt and snippet files by name from a directory.
class TemplateStore {
public:
    explicit TemplateStore(std::filesystem::path directory);

    /// Directory resolution order: $MEMCORRUPT_TEMPLATE_DIR, the source tree
    /// the library was built from, then the install location.
    static std::filesystem::path default_directory();

    const std::filesystem::path& directory() const noexcept { return directory_; }

    /// File contents with a single trailing newline removed.
    std::string load(std::string_view name) const;
    bool contains(std::string_view name) const;

private:
    std::filesystem::path directory_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::string, std::less<>> cache_;
};

} // namespace memcorrupt
