"""A scripted chat + MT service used to record the committed replay fixtures.

Everything here is deterministic: keyword extraction replies come from a
table, word translations from a small vocabulary, the equivalence judge
compares strings, and the "translator" copies the reference sentence while
garbling a hash-selected share of its words.  Words that appear in the
prompt's dictionary hints are never garbled, so richer hints score higher.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata

import httpx

API_URL = "http://scripted.test/v1"
MT_URL = "http://scripted.test/mt"

LANGS = ("srp_Cyrl", "ita_Latn", "spa_Latn", "fra_Latn", "deu_Latn", "por_Latn")

# english word -> translations in LANGS order
VOCAB_ROWS = {
    "river": ("река", "fiume", "río", "rivière", "Fluss", "rio"),
    "marks": ("означава", "segna", "marca", "marque", "markiert", "marca"),
    "limit": ("граница", "limite", "límite", "limite", "Grenze", "limite"),
    "old": ("стари", "vecchio", "viejo", "vieux", "alt", "velho"),
    "city": ("град", "città", "ciudad", "ville", "Stadt", "cidade"),
    "farmers": ("пољопривредници", "contadini", "agricultores", "agriculteurs", "Bauern", "agricultores"),
    "sell": ("продају", "vendono", "venden", "vendent", "verkaufen", "vendem"),
    "fresh": ("свеж", "fresco", "fresco", "frais", "frisch", "fresco"),
    "bread": ("хлеб", "pane", "pan", "pain", "Brot", "pão"),
    "market": ("пијаци", "mercato", "mercado", "marché", "Markt", "mercado"),
    "morning": ("јутра", "mattina", "mañana", "matin", "Morgen", "manhã"),
    "children": ("деца", "bambini", "niños", "enfants", "Kinder", "crianças"),
    "book": ("књигу", "libro", "libro", "livre", "Buch", "livro"),
    "moon": ("месецу", "luna", "luna", "lune", "Mond", "lua"),
    "rain": ("киша", "pioggia", "lluvia", "pluie", "Regen", "chuva"),
    "road": ("пут", "strada", "camino", "route", "Straße", "estrada"),
    "village": ("села", "villaggio", "pueblo", "village", "Dorf", "aldeia"),
    "doctor": ("лекар", "medico", "médico", "médecin", "Arzt", "médico"),
    "hospital": ("болници", "ospedale", "hospital", "hôpital", "Krankenhaus", "hospital"),
    "station": ("станице", "stazione", "estación", "gare", "Bahnhof", "estação"),
    "boat": ("чамац", "barca", "bote", "bateau", "Boot", "barco"),
    "lake": ("језеро", "lago", "lago", "lac", "See", "lago"),
    "night": ("ноћу", "notte", "noche", "nuit", "Nacht", "noite"),
    "museum": ("музеј", "museo", "museo", "musée", "Museum", "museu"),
    "exhibition": ("изложбу", "mostra", "exposición", "exposition", "Ausstellung", "exposição"),
    "spring": ("пролеће", "primavera", "primavera", "printemps", "Frühling", "primavera"),
    "students": ("студенти", "studenti", "estudiantes", "étudiants", "Studenten", "estudantes"),
    "exam": ("испит", "esame", "examen", "examen", "Prüfung", "exame"),
    "noon": ("подне", "mezzogiorno", "mediodía", "midi", "Mittag", "meio-dia"),
    "bridge": ("мост", "ponte", "puente", "pont", "Brücke", "ponte"),
    "century": ("веку", "secolo", "siglo", "siècle", "Jahrhundert", "século"),
    "grandmother": ("бака", "nonna", "abuela", "grand-mère", "Großmutter", "avó"),
    "tomatoes": ("парадајз", "pomodori", "tomates", "tomates", "Tomaten", "tomates"),
    "garden": ("башти", "giardino", "jardín", "jardin", "Garten", "jardim"),
    "train": ("воз", "treno", "tren", "train", "Zug", "comboio"),
    "capital": ("престоницу", "capitale", "capital", "capitale", "Hauptstadt", "capital"),
    "leaves": ("полази", "parte", "sale", "part", "fährt", "parte"),
    "scientists": ("научници", "scienziati", "científicos", "scientifiques", "Wissenschaftler", "cientistas"),
    "water": ("воду", "acqua", "agua", "eau", "Wasser", "água"),
    "ice": ("леда", "ghiaccio", "hielo", "glace", "Eis", "gelo"),
    "border": ("граница", "confine", "frontera", "frontière", "Grenze", "fronteira"),
}
VOCAB = {w: dict(zip(LANGS, row)) for w, row in VOCAB_ROWS.items()}
VOCAB["limit"]["tuk_Latn"] = "çäk"

# back-translations that lose the intended sense
WRONG_SENSE = {
    "marks": "stains",
    "capital": "money",
    "leaves": "foliage",
    "spring": "source",
    "village": "settlement",
    "exam": "inspection",
}

CORPUS = {
    "eng_Latn": [
        "The river marks the limit of the old city.",
        "Farmers sell fresh bread at the market every morning.",
        "The children read a book about the moon.",
        "Heavy rain closed the road to the village.",
        "The doctor works at the hospital near the station.",
        "A small boat crossed the lake at night.",
        "The museum opens a new exhibition in spring.",
        "Students must finish the exam before noon.",
        "The bridge was built in the last century.",
        "My grandmother grows tomatoes in her garden.",
        "The train to the capital leaves at eight.",
        "Scientists measured the water under the ice.",
    ],
    "srp_Cyrl": [
        "Река означава границу старог града.",
        "Пољопривредници сваког јутра продају свеж хлеб на пијаци.",
        "Деца читају књигу о месецу.",
        "Јака киша је затворила пут до села.",
        "Лекар ради у болници близу станице.",
        "Мали чамац је ноћу прешао језеро.",
        "Музеј отвара нову изложбу на пролеће.",
        "Студенти морају да заврше испит пре подне.",
        "Мост је изграђен у прошлом веку.",
        "Моја бака гаји парадајз у својој башти.",
        "Воз за престоницу полази у осам.",
        "Научници су измерили воду испод леда.",
    ],
    "ita_Latn": [
        "Il fiume segna il limite della città vecchia.",
        "I contadini vendono pane fresco al mercato ogni mattina.",
        "I bambini leggono un libro sulla luna.",
        "La pioggia forte ha chiuso la strada per il villaggio.",
        "Il medico lavora all'ospedale vicino alla stazione.",
        "Una piccola barca ha attraversato il lago di notte.",
        "Il museo apre una nuova mostra in primavera.",
        "Gli studenti devono finire l'esame prima di mezzogiorno.",
        "Il ponte è stato costruito nel secolo scorso.",
        "Mia nonna coltiva pomodori nel suo giardino.",
        "Il treno per la capitale parte alle otto.",
        "Gli scienziati hanno misurato l'acqua sotto il ghiaccio.",
    ],
    "spa_Latn": [
        "El río marca el límite de la ciudad vieja.",
        "Los agricultores venden pan fresco en el mercado cada mañana.",
        "Los niños leen un libro sobre la luna.",
        "La lluvia fuerte cerró el camino al pueblo.",
        "El médico trabaja en el hospital cerca de la estación.",
        "Un bote pequeño cruzó el lago de noche.",
        "El museo abre una nueva exposición en primavera.",
        "Los estudiantes deben terminar el examen antes del mediodía.",
        "El puente fue construido en el siglo pasado.",
        "Mi abuela cultiva tomates en su jardín.",
        "El tren a la capital sale a las ocho.",
        "Los científicos midieron el agua bajo el hielo.",
    ],
}

KEYWORDS = [
    "river, marks, limit, old, city",
    "farmers, sell, fresh, bread, market, morning",
    "children, book, moon",
    "rain, road, village",
    "doctor, hospital, station",
    "boat, lake, night",
    "museum, exhibition, spring",
    "students, exam, noon",
    "bridge, century",
    "grandmother, tomatoes, garden",
    "train, capital, leaves",
    "scientists, water, ice",
]

LIMIT_SENTENCE = "The border is only a limit on the map."

NAMES = {"English": "eng_Latn", "Serbian": "srp_Cyrl", "Italian": "ita_Latn", "Spanish": "spa_Latn"}

_TRANSLATE = re.compile(r"^Translate the following text from (.+?) into (.+?): (.*)$")
_JUDGE = re.compile(r'^Do "(.*)" and "(.*)" have the same meaning\? Answer yes or no\.$')
_EXTRACT = "Extract the words from the following texts: "
_QUOTED = re.compile(r"[‘'](.+?)[’']")


def _norm(word: str) -> str:
    word = unicodedata.normalize("NFC", word).casefold()
    return "".join(c for c in word if not unicodedata.category(c).startswith("P"))


def _unit(*parts: object) -> float:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class ScriptedWorld:
    """Request handler for ``httpx.MockTransport``.

    ``fail_always`` words never survive back-translation; ``fail_until`` maps
    a word to the number of tries that lose its sense before one succeeds.
    """

    def __init__(
        self,
        replies: dict[str, str] | None = None,
        vocab: dict[str, dict[str, str]] | None = None,
        wrong_sense: dict[str, str] | None = None,
        fail_always: set[str] | frozenset[str] = frozenset({"marks", "capital", "leaves"}),
        fail_until: dict[str, int] | None = None,
    ):
        if replies is None:
            replies = dict(zip(CORPUS["eng_Latn"], KEYWORDS))
            replies[LIMIT_SENTENCE] = "limit, border"
        self.replies = replies
        self.vocab = VOCAB if vocab is None else vocab
        self.wrong_sense = WRONG_SENSE if wrong_sense is None else wrong_sense
        self.fail_always = set(fail_always)
        self.fail_until = {"spring": 1} if fail_until is None else fail_until
        self.calls = 0

    # -- transport ------------------------------------------------------

    def handle(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        body = json.loads(request.content)
        if request.url.path.endswith("/chat/completions"):
            text = self.chat(body["messages"][-1]["content"])
            return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})
        if request.url.path.endswith("/mt"):
            text = self.mt(body["text"], body["source_lang"], body["target_lang"], body.get("seed", 0))
            return httpx.Response(200, json={"translation": text})
        return httpx.Response(404, json={"error": "no such route"})

    def client(self) -> httpx.Client:
        return httpx.Client(transport=httpx.MockTransport(self.handle))

    # -- services -------------------------------------------------------

    def mt(self, text: str, src: str, tgt: str, attempt: int = 0) -> str:
        if src == "eng_Latn":
            row = self.vocab.get(text)
            if row is None or tgt not in row:
                return text
            if self._loses_sense(text, attempt):
                return f"{row[tgt]}~{attempt}"
            return row[tgt]
        if tgt == "eng_Latn":
            base = text.split("~")[0]
            for word, row in self.vocab.items():
                if row.get(src) == base:
                    return self.wrong_sense.get(word, "other") if "~" in text else word
        return text

    def _loses_sense(self, word: str, attempt: int) -> bool:
        return word in self.fail_always or attempt < self.fail_until.get(word, 0)

    def chat(self, prompt: str) -> str:
        if prompt.startswith(_EXTRACT):
            return self.replies.get(prompt[len(_EXTRACT) :], "")
        m = _JUDGE.match(prompt)
        if m:
            return "Yes." if _norm(m.group(1)) == _norm(m.group(2)) else "No."
        m = _TRANSLATE.match(prompt.rsplit("\n", 1)[-1])
        if m:
            return self.translate(prompt, m.group(1), m.group(2), m.group(3))
        return "I cannot help with that."

    def translate(self, prompt: str, src_name: str, tgt_name: str, sentence: str) -> str:
        src, tgt = NAMES.get(src_name), NAMES.get(tgt_name)
        try:
            index = CORPUS[src].index(sentence)
            reference = CORPUS[tgt][index]
        except (KeyError, ValueError):
            return sentence
        hints = prompt.rsplit("\n", 1)[0] if "\n" in prompt else ""
        hinted = {_norm(w) for w in _QUOTED.findall(hints)}
        demos = hints.count(f"\n{tgt_name}: ") + hints.startswith(f"{tgt_name}: ")
        longest = max((line.count(" means ") for line in hints.split("\n")), default=0)
        rate = 0.45 - 0.04 * longest - 0.05 * demos
        if "’. ‘" in hints:
            rate += 0.06
        out = []
        for i, tok in enumerate(reference.split()):
            covered = any(_norm(tok).startswith(h[:4]) for h in hinted if len(h) >= 3)
            if not covered and _unit(reference, i) < rate:
                tok = tok[::-1] if len(tok) > 1 else tok + "?"
            out.append(tok)
        return " ".join(out)
