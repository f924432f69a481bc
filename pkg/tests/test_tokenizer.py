import pytest

from pivot_align.exceptions import ConfigError, DataError
from pivot_align.tokenizer import END_OF_WORD, MASK_ID, SEQ_ID, SPECIALS, UNK_ID, Vocabulary, train_bpe

HAND_CORPUS = ['ab ab ab', 'ab']


@pytest.fixture
def hand_vocab() -> Vocabulary:
    return train_bpe(HAND_CORPUS, target_size=100)


def test_specials_come_first():
    assert SPECIALS == ('[SEQ]', '[MASK]', '[PAD]', '[UNK]')
    assert (SEQ_ID, MASK_ID, UNK_ID) == (0, 1, 3)


def test_hand_merges(hand_vocab):
    """(a, b) and (b, ▁) both occur 4 times; the tie goes to the smaller merged string 'ab'."""
    assert hand_vocab.merges == (('a', 'b'), ('ab', END_OF_WORD))
    assert hand_vocab.alphabet == ('a', 'b')
    assert hand_vocab.size == len(SPECIALS) + 3 + 2
    assert hand_vocab.token(7) == 'ab'
    assert hand_vocab.id_of('ab' + END_OF_WORD) == 8
    assert hand_vocab.encode('ab ab') == [SEQ_ID, 8, 8]


def test_unknown_characters_become_unk(hand_vocab):
    assert hand_vocab.encode('ac') == [SEQ_ID, hand_vocab.id_of('a'), UNK_ID, hand_vocab.id_of(END_OF_WORD)]
    assert hand_vocab.decode(hand_vocab.encode('ac')) == 'a[UNK]'


@pytest.mark.parametrize('text', ['ab ab ab', 'ba', 'a  b', 'b', ''])
def test_decode_inverts_encode(hand_vocab, text):
    assert hand_vocab.decode(hand_vocab.encode(text)) == text


def test_min_pair_count_stops_training():
    vocab = train_bpe(['ab'], target_size=100, min_pair_count=2)
    assert vocab.merges == ()
    assert vocab.size == len(SPECIALS) + 3


def test_target_size_is_respected(tiny_world):
    texts = [r.text for r in tiny_world.captions]
    vocab = train_bpe(texts, target_size=60)
    assert vocab.size == 60
    assert train_bpe(texts, target_size=60) == vocab
    for text in texts[:20]:
        assert vocab.decode(vocab.encode(text)) == text


def test_training_errors():
    with pytest.raises(DataError, match='empty corpus'):
        train_bpe([], target_size=10)
    with pytest.raises(ConfigError, match='target_size'):
        train_bpe(['abcdef'], target_size=5)


def test_json_round_trip(hand_vocab):
    restored = Vocabulary.from_json(hand_vocab.json())
    assert restored == hand_vocab
    assert restored.encode('ab ba') == hand_vocab.encode('ab ba')


@pytest.mark.parametrize(
    'payload,message',
    [
        ('not json', 'not valid JSON'),
        ('{"version": 99}', 'Unsupported vocabulary file version'),
        ('{"version": 1, "specials": ["[PAD]"]}', 'Unexpected special tokens'),
        (
            '{"version": 1, "specials": ["[SEQ]", "[MASK]", "[PAD]", "[UNK]"], "alphabet": ["a"], "merges": [], '
            '"size": 9}',
            'declares size 9',
        ),
    ],
)
def test_from_json_rejects_bad_files(payload, message):
    with pytest.raises(DataError, match=message):
        Vocabulary.from_json(payload)


def test_lookup_errors(hand_vocab):
    with pytest.raises(DataError, match='out of range'):
        hand_vocab.token(hand_vocab.size)
    with pytest.raises(DataError, match='Unknown token'):
        hand_vocab.id_of('zz')


def test_construction_errors():
    with pytest.raises(DataError, match='Invalid alphabet symbol'):
        Vocabulary(['a', ' '], [])
    with pytest.raises(DataError, match='unknown token'):
        Vocabulary(['a'], [('a', 'q')])


def test_word_tokens(hand_vocab):
    assert not hand_vocab.is_word_token(SEQ_ID)
    assert not hand_vocab.is_word_token(hand_vocab.id_of(END_OF_WORD))
    assert hand_vocab.is_word_token(hand_vocab.id_of('ab' + END_OF_WORD))


def test_count_tokens(hand_vocab):
    counts = hand_vocab.count_tokens(HAND_CORPUS)
    assert counts == {hand_vocab.id_of('ab' + END_OF_WORD): 4}
