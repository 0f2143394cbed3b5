#include "turnwise/catalog.h"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <utility>

namespace turnwise {

namespace {

constexpr std::array<std::pair<Category, std::string_view>, kNumCategories>
    kCategoryNames = {{
        {Category::kGreetings, "greetings"},
        {Category::kActivity, "activity"},
        {Category::kLivingSituation, "living_situation"},
        {Category::kTravel, "travel"},
        {Category::kEntertainment, "entertainment"},
        {Category::kSocial, "social"},
        {Category::kPicture, "picture"},
        {Category::kTech, "tech"},
        {Category::kOccupation, "occupation"},
        {Category::kHobbies, "hobbies"},
        {Category::kFamily, "family"},
        {Category::kPets, "pets"},
        {Category::kConfirmation, "confirmation"},
        {Category::kClarification, "clarification"},
        {Category::kGoodbye, "goodbye"},
        {Category::kUnspecified, "unspecified"},
    }};

// Delexicalised slots (<activity>, <social topic>, ...) are literal text.
constexpr std::string_view kDefaultCatalogTsv = R"(# id	category	text
0	greetings	hi, how are you today?
1	greetings	good morning, nice to see you again
2	greetings	hello, can you hear me okay?
3	activity	did you go outside lately?
4	activity	so what did you do yesterday?
5	activity	so how long did you go out for?
6	activity	what did you like about <activity>?
7	activity	how often do you <do activity>?
8	activity	did you do anything else?
9	activity	what you were doing during this time period?
10	activity	what are your plans for the weekend?
11	activity	did you exercise this week?
12	activity	what did you do this morning?
13	living_situation	do you live alone?
14	living_situation	how long have you lived in your home?
15	living_situation	do you like your neighborhood?
16	living_situation	who takes care of the house chores?
17	living_situation	what is your apartment like?
18	living_situation	do you have a garden at home?
19	travel	have you travelled anywhere recently?
20	travel	where would you like to travel next?
21	travel	what was your favorite trip?
22	travel	how did you get to <place>?
23	travel	did you enjoy <place>?
24	travel	do you prefer driving or flying?
25	travel	have you ever been abroad?
26	entertainment	did you see any shows lately?
27	entertainment	what was the show about?
28	entertainment	do you watch the news?
29	entertainment	what kind of music do you like?
30	entertainment	have you read any good books lately?
31	entertainment	did you see any movies lately?
32	entertainment	what is your favorite tv program?
33	social	did you run into any familiar faces lately?
34	social	where did you have dinner?
35	social	what is your opinion on <social topic>?
36	social	anyone visit you lately?
37	social	did you talk to your friends this week?
38	social	do you belong to any clubs?
39	social	who did you have lunch with?
40	social	did you go to any gatherings lately?
41	social	anything new with you lately?
42	picture	what do you see in this picture?
43	picture	where do you think this picture was taken?
44	picture	when do you think this picture was taken?
45	picture	how many people do you think can fit in this?
46	picture	what are the people in this picture doing?
47	picture	does this picture remind you of anything?
48	picture	what would you do if you were there?
49	picture	what is the weather like in this picture?
50	tech	how are you with the computer?
51	tech	did you use your computer lately?
52	tech	what is your opinion on using <new tech>?
53	tech	when did <tech problem> start?
54	tech	can you see me clearly on the screen?
55	tech	do you use email?
56	tech	do you have a smartphone?
57	occupation	when did you start working?
58	occupation	what was <occupation> like for you?
59	occupation	what did you do for a living?
60	occupation	did you enjoy school?
61	occupation	when did you retire?
62	occupation	what was your first job?
63	occupation	did you like your coworkers?
64	occupation	what do you miss about working?
65	hobbies	what type of <hobby> do you do?
66	hobbies	do you have any hobbies?
67	hobbies	how did you get into <hobby>?
68	hobbies	do you like to cook?
69	hobbies	do you play any games?
70	hobbies	do you like gardening?
71	hobbies	what do you do to relax?
72	family	when did you meet your SO?
73	family	where did you meet your so?
74	family	do you have any grandchildren?
75	family	how often do you see your family?
76	family	tell me about your children.
77	family	did your family visit recently?
78	family	where did you grow up?
79	family	do you have brothers or sisters?
80	pets	do you have any pets?
81	pets	what is your pet's name?
82	pets	who takes care of <pet>?
83	pets	did you have pets growing up?
84	confirmation	is that right?
85	confirmation	so you said <topic>?
86	confirmation	did i hear that correctly?
87	confirmation	oh, really?
88	confirmation	you mean <topic>?
89	clarification	can you elaborate on that?
90	clarification	why did you do that?
91	clarification	what do you mean by that?
92	clarification	could you tell me more about it?
93	clarification	what did you like about it?
94	clarification	how did that make you feel?
95	goodbye	<goodbye>
96	goodbye	it was nice talking to you, goodbye
97	goodbye	see you next time
98	unspecified	<unspecified scheduling comment>
99	unspecified	<unspecified picture comment>
100	unspecified	<unspecified hobby comment>
101	unspecified	<unspecified tech comment>
102	unspecified	<unspecified occupational comment>
103	unspecified	<unspecified health comment>
104	unspecified	<unspecified social comment>
105	unspecified	<unspecified family comment>
106	unspecified	<unspecified activity comment>
)";

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

std::string_view CategoryName(Category category) {
  for (const auto& [value, name] : kCategoryNames) {
    if (value == category) return name;
  }
  return "unspecified";
}

Category CategoryFromName(std::string_view name) {
  for (const auto& [value, known] : kCategoryNames) {
    if (known == name) return value;
  }
  throw ParseError("unknown question category '" + std::string(name) + "'");
}

bool IsTopicCategory(Category category) {
  switch (category) {
    case Category::kSocial:
    case Category::kActivity:
    case Category::kTech:
    case Category::kPicture:
    case Category::kHobbies:
    case Category::kOccupation:
    case Category::kTravel:
    case Category::kEntertainment:
    case Category::kFamily:
      return true;
    default:
      return false;
  }
}

bool IsFollowUpCategory(Category category) {
  return category == Category::kConfirmation ||
         category == Category::kClarification;
}

QuestionCatalog::QuestionCatalog(std::vector<Question> questions)
    : questions_(std::move(questions)) {
  if (questions_.empty()) throw ValidationError("catalog is empty");
  std::sort(questions_.begin(), questions_.end(),
            [](const Question& a, const Question& b) { return a.id < b.id; });
  for (size_t i = 0; i < questions_.size(); ++i) {
    if (questions_[i].id != static_cast<QuestionId>(i)) {
      throw ValidationError("catalog ids must be dense 0.." +
                            std::to_string(questions_.size() - 1) +
                            "; found id " + std::to_string(questions_[i].id) +
                            " at position " + std::to_string(i));
    }
    if (greeting_ < 0 && questions_[i].category == Category::kGreetings) {
      greeting_ = questions_[i].id;
    }
    if (goodbye_ < 0 && questions_[i].category == Category::kGoodbye) {
      goodbye_ = questions_[i].id;
    }
  }
  if (greeting_ < 0) {
    throw ValidationError("catalog needs at least one greetings question");
  }
  if (goodbye_ < 0) {
    throw ValidationError("catalog needs at least one goodbye question");
  }
}

void QuestionCatalog::CheckId(QuestionId id) const {
  if (!Contains(id)) {
    throw UsageError("question id " + std::to_string(id) +
                     " outside catalog [0, " + std::to_string(size()) + ")");
  }
}

const Question& QuestionCatalog::question(QuestionId id) const {
  CheckId(id);
  return questions_[id];
}

bool QuestionCatalog::IsGoodbye(QuestionId id) const {
  return category(id) == Category::kGoodbye;
}

bool QuestionCatalog::IsGreeting(QuestionId id) const {
  return category(id) == Category::kGreetings;
}

std::vector<QuestionId> QuestionCatalog::InCategory(Category category) const {
  std::vector<QuestionId> ids;
  for (const auto& q : questions_) {
    if (q.category == category) ids.push_back(q.id);
  }
  return ids;
}

Vector QuestionCatalog::OneHot(QuestionId id) const {
  CheckId(id);
  Vector v = Vector::Zero(size());
  v[id] = 1.0;
  return v;
}

ActionMask QuestionCatalog::MaskVector(
    std::span<const QuestionId> history) const {
  bool topic_raised = false;
  for (QuestionId id : history) {
    CheckId(id);
    topic_raised = topic_raised || IsTopicCategory(questions_[id].category);
  }
  ActionMask mask(questions_.size(), 1);
  if (!topic_raised) {
    for (const auto& q : questions_) {
      if (IsFollowUpCategory(q.category)) mask[q.id] = 0;
    }
  }
  return mask;
}

ActionMask QuestionCatalog::AgentMask(
    std::span<const QuestionId> history) const {
  ActionMask mask = MaskVector(history);
  for (const auto& q : questions_) {
    if (q.category == Category::kGreetings) mask[q.id] = 0;
  }
  return mask;
}

std::string QuestionCatalog::ToTsv() const {
  std::string out;
  for (const auto& q : questions_) {
    out += std::to_string(q.id);
    out += '\t';
    out += CategoryName(q.category);
    out += '\t';
    out += q.text;
    out += '\n';
  }
  return out;
}

QuestionCatalog ParseCatalog(std::string_view text, std::string_view source) {
  std::vector<Question> questions;
  std::vector<int> seen_line;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string where =
        std::string(source) + ":" + std::to_string(line_no) + ": ";
    if (Trim(line).empty() || Trim(line).front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    const size_t tab1 = line.find('\t');
    const size_t tab2 =
        tab1 == std::string_view::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string_view::npos) {
      throw ParseError(where + "expected id<TAB>category<TAB>text");
    }
    const std::string id_text(Trim(line.substr(0, tab1)));
    Question q;
    try {
      size_t used = 0;
      q.id = std::stoi(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument(id_text);
    } catch (const std::exception&) {
      throw ParseError(where + "invalid question id '" + id_text + "'");
    }
    if (q.id < 0) throw ParseError(where + "negative question id");
    try {
      q.category = CategoryFromName(Trim(line.substr(tab1 + 1, tab2 - tab1 - 1)));
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
    q.text = std::string(Trim(line.substr(tab2 + 1)));
    if (q.text.empty()) throw ParseError(where + "empty question text");
    if (static_cast<size_t>(q.id) >= seen_line.size()) {
      seen_line.resize(q.id + 1, 0);
    }
    if (seen_line[q.id] != 0) {
      throw ParseError(where + "duplicate question id " +
                       std::to_string(q.id) + " (first defined on line " +
                       std::to_string(seen_line[q.id]) + ")");
    }
    seen_line[q.id] = static_cast<int>(line_no);
    questions.push_back(std::move(q));
    if (end == text.size()) break;
  }
  if (questions.empty()) {
    throw ParseError(std::string(source) + ": catalog contains no questions");
  }
  try {
    return QuestionCatalog(std::move(questions));
  } catch (const ValidationError& e) {
    throw ParseError(std::string(source) + ": " + e.what());
  }
}

QuestionCatalog LoadCatalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open catalog file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ParseCatalog(buffer.str(), path.string());
}

const QuestionCatalog& DefaultCatalog() {
  static const QuestionCatalog catalog =
      ParseCatalog(kDefaultCatalogTsv, "<builtin>");
  return catalog;
}

QuestionCatalog CompactCatalog(int d) {
  const QuestionCatalog& full = DefaultCatalog();
  if (d < 4 || d > full.size()) {
    throw UsageError("compact catalog size must be in [4, " +
                     std::to_string(full.size()) + "], got " +
                     std::to_string(d));
  }
  std::vector<QuestionId> picked = {
      full.InCategory(Category::kGreetings).front(),
      full.InCategory(Category::kGoodbye).front(),
      full.InCategory(Category::kConfirmation).front(),
      full.InCategory(Category::kClarification).front(),
  };
  constexpr std::array<Category, 12> kRotation = {
      Category::kActivity,      Category::kSocial,
      Category::kPicture,       Category::kTech,
      Category::kOccupation,    Category::kHobbies,
      Category::kTravel,        Category::kEntertainment,
      Category::kFamily,        Category::kLivingSituation,
      Category::kPets,          Category::kUnspecified,
  };
  std::vector<std::vector<QuestionId>> pools;
  for (Category c : kRotation) pools.push_back(full.InCategory(c));
  // Remaining follow-ups, greetings and goodbyes join after the topics run out.
  std::vector<QuestionId> tail;
  for (Category c : {Category::kConfirmation, Category::kClarification,
                     Category::kGreetings, Category::kGoodbye}) {
    auto ids = full.InCategory(c);
    tail.insert(tail.end(), ids.begin() + 1, ids.end());
  }
  for (size_t round = 0; static_cast<int>(picked.size()) < d; ++round) {
    bool any = false;
    for (const auto& pool : pools) {
      if (round < pool.size() && static_cast<int>(picked.size()) < d) {
        picked.push_back(pool[round]);
        any = true;
      }
    }
    if (!any) break;
  }
  for (size_t i = 0; static_cast<int>(picked.size()) < d; ++i) {
    picked.push_back(tail.at(i));
  }
  std::vector<Question> questions;
  for (size_t i = 0; i < picked.size(); ++i) {
    Question q = full.question(picked[i]);
    q.id = static_cast<QuestionId>(i);
    questions.push_back(std::move(q));
  }
  return QuestionCatalog(std::move(questions));
}

}  // namespace turnwise
