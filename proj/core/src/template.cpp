// SPDX-License-Identifier: Apache-2.0
#include "memcorrupt/template.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace memcorrupt {

namespace {

bool is_name_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

struct Tag {
    enum class Kind { scalar, open, close } kind;
    std::string name;
    std::string separator;
    std::size_t end; // one past the closing brace
};

// Parses a tag starting at `pos` (which holds '{'); returns false when the
// brace does not start a tag.
bool parse_tag(std::string_view t, std::size_t pos, Tag& tag)
{
    std::size_t i = pos + 1;
    tag.kind = Tag::Kind::scalar;
    if (i < t.size() && t[i] == '#') {
        tag.kind = Tag::Kind::open;
        ++i;
    } else if (i < t.size() && t[i] == '/') {
        tag.kind = Tag::Kind::close;
        ++i;
    }
    std::size_t name_start = i;
    while (i < t.size() && is_name_char(t[i]))
        ++i;
    if (i == name_start)
        return false;
    tag.name = std::string(t.substr(name_start, i - name_start));
    tag.separator.clear();
    if (tag.kind == Tag::Kind::open && i < t.size() && t[i] == '|') {
        auto close = t.find('}', i);
        if (close == std::string_view::npos)
            return false;
        tag.separator = std::string(t.substr(i + 1, close - i - 1));
        i = close;
    }
    if (i >= t.size() || t[i] != '}')
        return false;
    tag.end = i + 1;
    return true;
}

// Finds the matching close tag for a section, honouring nesting.
std::size_t find_close(std::string_view t, std::size_t from, const std::string& name, std::size_t& after)
{
    int depth = 0;
    for (std::size_t i = from; i < t.size(); ++i) {
        if (t[i] != '{')
            continue;
        Tag tag;
        if (!parse_tag(t, i, tag) || tag.name != name)
            continue;
        if (tag.kind == Tag::Kind::open) {
            ++depth;
        } else if (tag.kind == Tag::Kind::close) {
            if (depth == 0) {
                after = tag.end;
                return i;
            }
            --depth;
        }
    }
    throw TemplateError("unterminated section {#" + name + "}");
}

void render_into(std::string& out, std::string_view t, const TemplateContext& ctx)
{
    std::size_t i = 0;
    while (i < t.size()) {
        char c = t[i];
        if (c == '{' && i + 1 < t.size() && t[i + 1] == '{') {
            out.push_back('{');
            i += 2;
            continue;
        }
        if (c == '}' && i + 1 < t.size() && t[i + 1] == '}') {
            out.push_back('}');
            i += 2;
            continue;
        }
        Tag tag;
        if (c != '{' || !parse_tag(t, i, tag)) {
            out.push_back(c);
            ++i;
            continue;
        }
        switch (tag.kind) {
        case Tag::Kind::scalar: {
            auto it = ctx.scalars.find(tag.name);
            if (it == ctx.scalars.end())
                throw TemplateError("no value for placeholder {" + tag.name + "}");
            out += it->second;
            i = tag.end;
            break;
        }
        case Tag::Kind::open: {
            std::size_t after = 0;
            auto close = find_close(t, tag.end, tag.name, after);
            auto body = t.substr(tag.end, close - tag.end);
            if (auto list = ctx.lists.find(tag.name); list != ctx.lists.end()) {
                bool first = true;
                for (const auto& row : list->second) {
                    if (!first)
                        out += tag.separator;
                    first = false;
                    TemplateContext inner = ctx;
                    for (const auto& [k, v] : row)
                        inner.scalars[k] = v;
                    render_into(out, body, inner);
                }
            } else if (auto scalar = ctx.scalars.find(tag.name); scalar != ctx.scalars.end()) {
                if (!scalar->second.empty())
                    render_into(out, body, ctx);
            } else {
                throw TemplateError("no value for section {#" + tag.name + "}");
            }
            i = after;
            break;
        }
        case Tag::Kind::close:
            throw TemplateError("unexpected {/" + tag.name + "}");
        }
    }
}

} // namespace

std::string render_template(std::string_view tmpl, const TemplateContext& context)
{
    std::string out;
    out.reserve(tmpl.size() * 2);
    render_into(out, tmpl, context);
    return out;
}

TemplateStore::TemplateStore(std::filesystem::path directory) : directory_(std::move(directory))
{
    if (!std::filesystem::is_directory(directory_))
        throw IoError("template directory not found: " + directory_.string());
}

std::filesystem::path TemplateStore::default_directory()
{
    if (const char* env = std::getenv("MEMCORRUPT_TEMPLATE_DIR"); env != nullptr && *env != '\0')
        return env;
#ifdef MEMCORRUPT_SOURCE_TEMPLATE_DIR
    if (std::filesystem::is_directory(MEMCORRUPT_SOURCE_TEMPLATE_DIR))
        return MEMCORRUPT_SOURCE_TEMPLATE_DIR;
#endif
#ifdef MEMCORRUPT_INSTALL_TEMPLATE_DIR
    return MEMCORRUPT_INSTALL_TEMPLATE_DIR;
#else
    return "templates";
#endif
}

std::string TemplateStore::load(std::string_view name) const
{
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(name); it != cache_.end())
        return it->second;

    auto path = directory_ / std::string(name);
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("missing template file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::string content = buffer.str();
    if (!content.empty() && content.back() == '\n')
        content.pop_back();
    cache_.emplace(std::string(name), content);
    return content;
}

bool TemplateStore::contains(std::string_view name) const
{
    return std::filesystem::is_regular_file(directory_ / std::string(name));
}

} // namespace memcorrupt
