"""Named-entity extraction for captions.

A spaCy pipeline does this job when its model weights are installed; this
module is a deterministic rule-and-gazetteer tagger with the same output
contract: mentions grouped under the 18 OntoNotes labels the downstream
context builder accepts.  Numeric and temporal labels (DATE, TIME, MONEY,
PERCENT, QUANTITY, ORDINAL, CARDINAL) come from pattern rules; name-like
labels come from curated gazetteers with longest-match lookup.

Conservative by design: a capitalized word that no rule or gazetteer
knows stays untagged rather than guessing a label.
"""

import re
from collections import OrderedDict

# accepted output labels; mirrors the consumer's entity-type set
ENTITY_TYPES = (
    "CARDINAL", "DATE", "EVENT", "FAC", "GPE", "LANGUAGE", "LAW", "LOC",
    "MONEY", "NORP", "ORDINAL", "ORG", "PERCENT", "PERSON", "PRODUCT",
    "QUANTITY", "TIME", "WORK_OF_ART",
)

_TOKEN_RE = re.compile(
    r"[APap]\.[Mm]\.?"          # a.m. / p.m.
    r"|[Oo]'[Cc]lock"
    r"|\d+:\d+"                 # clock times
    r"|\d{4}s"                  # decades
    r"|\d+(?:st|nd|rd|th)\b"    # ordinal numerals
    r"|\d+(?:[.,]\d+)*"         # 5  4.5  5,000
    r"|[A-Za-z]+"
    r"|[^\sA-Za-z0-9]"
)

_WEEKDAYS = {"monday", "tuesday", "wednesday", "thursday", "friday",
             "saturday", "sunday"}
_MONTHS = {"january", "february", "march", "april", "may", "june", "july",
           "august", "september", "october", "november", "december"}
_RELATIVE_DAYS = {"today", "tonight", "yesterday", "tomorrow"}
_DATE_SPANS = {"week", "weekend", "month", "year", "decade", "century"}
_HOLIDAYS = {"christmas", "easter", "thanksgiving", "diwali", "holi", "eid",
             "ramadan", "hanukkah", "halloween"}
_TIME_WORDS = {"noon", "midnight", "dawn", "dusk", "morning", "afternoon",
               "evening", "night"}
_AMPM = {"am", "pm", "a.m.", "p.m.", "a.m", "p.m"}
_MONEY_SYMBOLS = {"$", "€", "£", "¥"}
_MONEY_WORDS = {"dollars", "dollar", "cents", "cent", "rupees", "euros",
                "francs", "yen"}
_SCALE_WORDS = {"thousand", "million", "billion", "trillion"}
_UNIT_WORDS = {"mile", "miles", "km", "kilometer", "kilometers", "kilometre",
               "kilometres", "meter", "meters", "metre", "metres", "foot",
               "feet", "kg", "kilogram", "kilograms", "ton", "tons", "tonne",
               "tonnes", "pound", "pounds", "litre", "litres", "liter",
               "liters", "gallon", "gallons", "acre", "acres", "hectare",
               "hectares", "mph", "degrees", "megawatts"}
_ORDINAL_WORDS = {"first", "second", "third", "fourth", "fifth", "sixth",
                  "seventh", "eighth", "ninth", "tenth", "eleventh", "twelfth"}
_CARDINAL_WORDS = {"one", "two", "three", "four", "five", "six", "seven",
                   "eight", "nine", "ten", "eleven", "twelve", "twenty",
                   "thirty", "forty", "fifty", "hundred", "dozens",
                   "hundreds", "thousands", "millions", "billions"}
_HONORIFICS = {"Mr", "Mrs", "Ms", "Dr", "Sir", "Lady", "President",
               "Minister", "Mayor", "Judge", "Professor", "Prof", "Captain",
               "Sergeant", "Officer", "Senator", "Governor", "Chancellor",
               "Pope", "King", "Queen", "Prince", "Princess"}

# case-sensitive proper-noun phrases; longest token match wins across labels
GAZETTEERS = {
    "GPE": (
        "Delhi", "New Delhi", "Mumbai", "Kolkata", "Chennai", "Paris",
        "London", "Berlin", "Rome", "Madrid", "Moscow", "Beijing", "Tokyo",
        "Seoul", "Cairo", "Istanbul", "Athens", "Boston", "Chicago",
        "Seattle", "Houston", "Toronto", "Sydney", "Nairobi", "Lagos",
        "Karachi", "Dhaka", "Jakarta", "Manila", "Bangkok", "Kabul",
        "Baghdad", "Tehran", "Kyiv", "Warsaw", "Vienna", "Lisbon", "Dublin",
        "Oslo", "Geneva", "Brussels", "Amsterdam", "New York",
        "Los Angeles", "San Francisco", "Washington", "Hong Kong", "India",
        "France", "Germany", "Italy", "Spain", "Russia", "China", "Japan",
        "Egypt", "Turkey", "Greece", "Brazil", "Mexico", "Canada",
        "Australia", "Kenya", "Nigeria", "Pakistan", "Bangladesh",
        "Indonesia", "Ukraine", "Poland", "Austria", "Portugal", "Ireland",
        "Norway", "Switzerland", "Belgium", "Netherlands", "United States",
        "United Kingdom", "South Korea", "New Zealand", "Sri Lanka",
        "Texas", "California", "Florida",
    ),
    "LOC": (
        "Ganges", "Nile", "Amazon", "Danube", "Thames", "Seine", "Rhine",
        "Mississippi", "Himalayas", "Alps", "Andes", "Mount Everest",
        "Mount Fuji", "Kilimanjaro", "Sahara", "Atlantic Ocean",
        "Pacific Ocean", "Indian Ocean", "Arctic", "Antarctica",
        "Lake Victoria", "Red Sea", "Black Sea", "Bay of Bengal",
        "Middle East", "South Asia", "Southeast Asia", "Europe", "Asia",
        "Africa",
    ),
    "FAC": (
        "Eiffel Tower", "Taj Mahal", "Golden Gate Bridge",
        "Brooklyn Bridge", "Big Ben", "Louvre", "Colosseum", "Times Square",
        "Red Fort", "India Gate", "Tower Bridge", "Empire State Building",
        "Statue of Liberty", "Heathrow Airport", "Grand Central Station",
        "Central Park",
    ),
    "ORG": (
        "United Nations", "European Union", "World Bank", "Red Cross",
        "NATO", "UNICEF", "WHO", "Google", "Microsoft", "Reuters", "BBC",
        "CNN", "NASA", "FIFA", "Interpol", "Parliament", "Congress",
        "Senate", "Supreme Court", "Scotland Yard", "Oxford University",
        "Harvard University", "Stanford University",
    ),
    "NORP": (
        "Indian", "Indians", "French", "German", "Germans", "Italian",
        "Italians", "Spanish", "Russian", "Russians", "Chinese", "Japanese",
        "Egyptian", "Turkish", "Greek", "Greeks", "Brazilian", "Mexican",
        "Canadian", "Australian", "Kenyan", "Nigerian", "Pakistani",
        "Bangladeshi", "Indonesian", "Ukrainian", "Polish", "American",
        "Americans", "British", "Buddhist", "Buddhists", "Hindu", "Hindus",
        "Muslim", "Muslims", "Christian", "Christians", "Sikh", "Sikhs",
        "Democrat", "Democrats", "Republican", "Republicans",
    ),
    "EVENT": (
        "Olympics", "Olympic Games", "World Cup", "Super Bowl",
        "World War II", "World War I", "Hurricane Katrina",
        "Cannes Film Festival", "Oktoberfest", "Mardi Gras", "Earth Day",
    ),
    "LANGUAGE": (
        "Hindi", "Urdu", "Mandarin", "Swahili", "Sanskrit", "Latin",
        "Esperanto",
    ),
    "LAW": (
        "Constitution", "First Amendment", "Geneva Convention",
        "Paris Agreement", "Civil Rights Act", "Clean Air Act",
        "Magna Carta",
    ),
    "PRODUCT": (
        "iPhone", "iPad", "Boeing 747", "Airbus A380", "PlayStation",
        "Xbox", "Kindle", "Concorde",
    ),
    "WORK_OF_ART": (
        "Mona Lisa", "The Starry Night", "Hamlet", "The Odyssey",
        "Guernica", "The Last Supper",
    ),
}


def _tokenize(text):
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def _is_number(tok):
    return bool(re.fullmatch(r"\d+(?:[.,]\d+)*", tok))


def _is_year(tok):
    return tok.isdigit() and len(tok) == 4 and 1800 <= int(tok) <= 2099


def _build_gazetteer_index():
    index = {}
    for label, phrases in GAZETTEERS.items():
        for phrase in phrases:
            words = tuple(phrase.split())
            key = words[0]
            prev = index.setdefault(key, [])
            if any(w == words for w, _ in prev):
                raise ValueError(f"duplicate gazetteer phrase {phrase!r}")
            prev.append((words, label))
    for key in index:
        index[key].sort(key=lambda w: -len(w[0]))
    return index

_GAZ_INDEX = _build_gazetteer_index()


def _match_money(toks, i):
    t = toks[i][0]
    if t in _MONEY_SYMBOLS and i + 1 < len(toks) and _is_number(toks[i + 1][0]):
        j = i + 2
        if j < len(toks) and toks[j][0].lower() in _SCALE_WORDS:
            j += 1
        return "MONEY", j
    if _is_number(t) and i + 1 < len(toks):
        j = i + 1
        if toks[j][0].lower() in _SCALE_WORDS and j + 1 < len(toks) \
                and toks[j + 1][0].lower() in _MONEY_WORDS:
            return "MONEY", j + 2
        if toks[j][0].lower() in _MONEY_WORDS:
            return "MONEY", j + 1
    return None


def _match_percent(toks, i):
    if _is_number(toks[i][0]) and i + 1 < len(toks):
        nxt = toks[i + 1][0]
        if nxt == "%" or nxt.lower() == "percent":
            return "PERCENT", i + 2
    return None


def _match_quantity(toks, i):
    if _is_number(toks[i][0]) and i + 1 < len(toks) \
            and toks[i + 1][0].lower() in _UNIT_WORDS:
        return "QUANTITY", i + 2
    return None


def _match_time(toks, i):
    t = toks[i][0]
    if re.fullmatch(r"\d+:\d+", t):
        j = i + 1
        if j < len(toks) and toks[j][0].lower() in _AMPM:
            j += 1
        return "TIME", j
    if t.isdigit() and i + 1 < len(toks):
        nxt = toks[i + 1][0].lower()
        if nxt in _AMPM or nxt == "o'clock":
            return "TIME", i + 2
    if t.lower() in _TIME_WORDS:
        return "TIME", i + 1
    return None


def _match_date(toks, i):
    t = toks[i][0]
    low = t.lower()
    if low in _WEEKDAYS or low.rstrip("s") in _WEEKDAYS:
        return "DATE", i + 1
    if low in _RELATIVE_DAYS or low in _HOLIDAYS:
        return "DATE", i + 1
    if low in ("this", "last", "next", "every") and i + 1 < len(toks):
        nxt = toks[i + 1][0].lower()
        if nxt in _DATE_SPANS or nxt in _WEEKDAYS or nxt in _MONTHS:
            return "DATE", i + 2
    if low in _MONTHS:
        j = i + 1
        if j < len(toks) and toks[j][0].isdigit() and len(toks[j][0]) <= 2:
            j += 1
        if j < len(toks) and _is_year(toks[j][0]):
            j += 1
        return "DATE", j
    if t.isdigit() and len(t) <= 2 and i + 1 < len(toks) \
            and toks[i + 1][0].lower() in _MONTHS:
        j = i + 2
        if j < len(toks) and _is_year(toks[j][0]):
            j += 1
        return "DATE", j
    if _is_year(t):
        return "DATE", i + 1
    if re.fullmatch(r"\d{4}s", t):
        return "DATE", i + 1
    return None


def _match_ordinal(toks, i):
    t = toks[i][0]
    if re.fullmatch(r"\d+(?:st|nd|rd|th)", t) or t.lower() in _ORDINAL_WORDS:
        return "ORDINAL", i + 1
    return None


def _match_cardinal(toks, i):
    t = toks[i][0]
    if _is_number(t) or t.lower() in _CARDINAL_WORDS:
        return "CARDINAL", i + 1
    return None


def _match_gazetteer(toks, i):
    for words, label in _GAZ_INDEX.get(toks[i][0], ()):
        k = len(words)
        if i + k <= len(toks) and tuple(t[0] for t in toks[i:i + k]) == words:
            return label, i + k
    return None


def _match_person(toks, i):
    if toks[i][0] not in _HONORIFICS:
        return None
    j = i + 1
    if j < len(toks) and toks[j][0] == ".":    # "Mr." style
        j += 1
    start = j
    while j < len(toks) and j - start < 2 and toks[j][0][:1].isupper() \
            and toks[j][0].isalpha() and _match_gazetteer(toks, j) is None:
        j += 1
    if j == start:
        return None
    return "PERSON", (start, j)


# gazetteer first: a proper phrase ("First Amendment", "Paris Agreement")
# outranks the generic numeric/temporal rules its first word could trigger
_MATCHERS = (_match_gazetteer, _match_money, _match_percent, _match_quantity,
             _match_time, _match_date, _match_ordinal, _match_cardinal)


def extract_entities(caption):
    """Entity mentions in ``caption``, grouped by label.

    Returns a plain dict {label: [mention, ...]} with labels in first-
    occurrence order and mentions deduplicated; captions without any
    recognized entity give {}.
    """
    toks = _tokenize(caption)
    found = OrderedDict()
    i = 0
    while i < len(toks):
        hit = None
        for match in _MATCHERS:
            got = match(toks, i)
            if got is not None:
                label, j = got
                hit = (label, i, j)
                break
        if hit is None:
            got = _match_person(toks, i)
            if got is not None:
                label, (a, b) = got
                hit = (label, a, b)
        if hit is None:
            i += 1
            continue
        label, a, b = hit
        mention = caption[toks[a][1]:toks[b - 1][2]]
        found.setdefault(label, [])
        if mention not in found[label]:
            found[label].append(mention)
        i = b
    return dict(found)
